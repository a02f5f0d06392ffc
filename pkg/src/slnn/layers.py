"""Differentiable layers: dense, input batch normalization, recurrent
dropout, and the LSTM / ConvLSTM cells the forecasting networks stack.

Shared conventions:

* gate order inside every recurrent cell is (input, forget, candidate,
  output), with hard-sigmoid on the three gates and tanh on the candidate
  and cell output,
* recurrent state is reset to zeros at each sequence start and keeps a
  constant shape across the sequence,
* forward/backward never mutate parameters; only an optimizer step does.
"""

from dataclasses import dataclass

import numpy as np

from slnn import autodiff as ad
from slnn.autodiff import Tensor


def glorot_uniform(rng, shape, fan_in, fan_out):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def orthogonal(rng, n):
    """Orthogonal n*n matrix with a sign convention fixed for determinism."""
    q, r = np.linalg.qr(rng.standard_normal((n, n)))
    return q * np.sign(np.diag(r))


def activation(x, kind):
    """Elementwise activation: relu, tanh, or hard_sigmoid."""
    if kind == "relu":
        return ad.relu(x)
    if kind == "tanh":
        return ad.tanh(x)
    if kind == "hard_sigmoid":
        return ad.hard_sigmoid(x)
    raise ValueError(f"unknown activation kind {kind!r}")


def recurrent_dropout_mask(shape, rate, rng):
    """Bernoulli keep-mask scaled by 1/(1-rate).

    The caller reuses one mask for every time step of a sequence, so the
    same coordinates stay dropped for the whole sequence.  ``rate`` is the
    fraction dropped.
    """
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if rate == 0.0:
        return np.ones(shape)
    keep = rng.random(size=shape) >= rate
    return keep / (1.0 - rate)


@dataclass
class RecurrentState:
    """Per-layer recurrent carry: hidden output h and cell memory c."""

    h: Tensor
    c: Tensor


class Dense:
    """Linear map weights.T @ x + bias, no activation."""

    def __init__(self, n_in, n_out, rng):
        self.w = ad.parameter(
            glorot_uniform(rng, (n_in, n_out), n_in, n_out), "dense.w"
        )
        self.b = ad.parameter(np.zeros(n_out), "dense.b")

    def __call__(self, x):
        if x.shape[0] != self.w.shape[0]:
            raise ValueError(
                f"dense input extent {x.shape} does not match weights {self.w.shape}"
            )
        return ad.matmul(x, self.w) + self.b

    def params(self):
        return [self.w, self.b]

    def tracked(self):
        return []


class Conv2d:
    """Stride-1 same-padding convolution layer with one bias per filter."""

    def __init__(self, c_in, c_out, k, rng):
        self.kernels = ad.parameter(
            glorot_uniform(rng, (c_out, c_in, k, k), c_in * k * k, c_out * k * k),
            "conv.kernels",
        )
        self.b = ad.parameter(np.zeros(c_out), "conv.b")

    def __call__(self, x):
        return ad.conv2d(x, self.kernels, self.b, stride=1, padding="same")

    def params(self):
        return [self.kernels, self.b]

    def tracked(self):
        return []


class Deconv2d:
    """Transposed convolution with kernel extent == stride (exact upsample)."""

    def __init__(self, c_in, c_out, stride, rng):
        self.stride = stride
        self.kernels = ad.parameter(
            glorot_uniform(
                rng,
                (c_in, c_out, stride, stride),
                c_in * stride * stride,
                c_out * stride * stride,
            ),
            "deconv.kernels",
        )
        self.b = ad.parameter(np.zeros(c_out), "deconv.b")

    def __call__(self, x):
        return ad.deconv2d(x, self.kernels, self.b, stride=self.stride)

    def params(self):
        return [self.kernels, self.b]

    def tracked(self):
        return []


class BatchNormInput:
    """Channelwise batch normalization over the non-masked cells of a field.

    Train mode normalizes with the statistics of the current input and
    updates the running mean/variance with momentum 0.99; infer mode uses
    the running statistics.  gamma/beta are trainable, the running stats
    are tracked, so the layer carries 4 values per channel.
    """

    EPS = 1e-3
    MOMENTUM = 0.99

    def __init__(self, channels):
        self.gamma = ad.parameter(np.ones(channels), "bn.gamma")
        self.beta = ad.parameter(np.zeros(channels), "bn.beta")
        self.running_mean = np.zeros(channels)
        self.running_var = np.ones(channels)

    def __call__(self, x, mask, training):
        c = x.shape[0]
        n = float(mask.sum())
        if n == 0:
            raise ValueError("batch normalization needs at least one non-masked cell")
        if training:
            maskb = mask[None, :, :].astype(np.float64)
            mu = ad.tsum(x * maskb, axis=(1, 2)) * (1.0 / n)
            centered = x - ad.reshape(mu, (c, 1, 1))
            var = ad.tsum(centered * centered * maskb, axis=(1, 2)) * (1.0 / n)
            self.running_mean = (
                self.MOMENTUM * self.running_mean + (1.0 - self.MOMENTUM) * mu.data
            )
            self.running_var = (
                self.MOMENTUM * self.running_var + (1.0 - self.MOMENTUM) * var.data
            )
            inv = ad.pow_const(var + self.EPS, -0.5)
        else:
            centered = x - self.running_mean.reshape(c, 1, 1)
            inv = Tensor(1.0 / np.sqrt(self.running_var + self.EPS))
        scaled = centered * ad.reshape(inv * self.gamma, (c, 1, 1))
        return scaled + ad.reshape(self.beta, (c, 1, 1))

    def params(self):
        return [self.gamma, self.beta]

    def tracked(self):
        return [("bn.running_mean", self.running_mean), ("bn.running_var", self.running_var)]

    def set_tracked(self, values):
        self.running_mean, self.running_var = [np.array(v) for v in values]


class LSTMCell:
    """Vector LSTM cell with fused gate matrices W [n_in,4u], U [u,4u], b [4u]."""

    def __init__(self, n_in, units, rng):
        self.units = units
        self.w = ad.parameter(
            glorot_uniform(rng, (n_in, 4 * units), n_in, 4 * units), "lstm.w"
        )
        u_blocks = np.concatenate([orthogonal(rng, units) for _ in range(4)], axis=1)
        self.u = ad.parameter(u_blocks, "lstm.u")
        bias = np.zeros(4 * units)
        bias[units : 2 * units] = 1.0  # forget gate open at the start of training
        self.b = ad.parameter(bias, "lstm.b")

    def zero_state(self):
        return RecurrentState(Tensor(np.zeros(self.units)), Tensor(np.zeros(self.units)))

    def step(self, x, state, drop_masks=None):
        if x.shape[0] != self.w.shape[0]:
            raise ValueError(
                f"lstm input extent {x.shape} does not match W {self.w.shape}"
            )
        h, c = state.h, state.c
        if drop_masks is not None:
            x = x * drop_masks[0]
            h = h * drop_masks[1]
        z = ad.matmul(x, self.w) + ad.matmul(h, self.u) + self.b
        u = self.units
        i = ad.hard_sigmoid(z[0:u])
        f = ad.hard_sigmoid(z[u : 2 * u])
        g = ad.tanh(z[2 * u : 3 * u])
        o = ad.hard_sigmoid(z[3 * u : 4 * u])
        c_new = f * c + i * g
        h_new = o * ad.tanh(c_new)
        return h_new, RecurrentState(h_new, c_new)

    def params(self):
        return [self.w, self.u, self.b]

    def tracked(self):
        return []


class ConvLSTMCell:
    """LSTM cell whose gate transformations are same-padding convolutions,
    so the hidden and cell states keep the spatial grid structure."""

    def __init__(self, c_in, units, k, rng):
        self.units = units
        self.k = k
        self.wx = ad.parameter(
            glorot_uniform(
                rng, (4 * units, c_in, k, k), c_in * k * k, 4 * units * k * k
            ),
            "convlstm.wx",
        )
        self.wh = ad.parameter(
            glorot_uniform(
                rng, (4 * units, units, k, k), units * k * k, 4 * units * k * k
            ),
            "convlstm.wh",
        )
        bias = np.zeros(4 * units)
        bias[units : 2 * units] = 1.0
        self.b = ad.parameter(bias, "convlstm.b")

    def zero_state(self, h, w):
        return RecurrentState(
            Tensor(np.zeros((self.units, h, w))), Tensor(np.zeros((self.units, h, w)))
        )

    def step(self, x, state):
        h, c = state.h, state.c
        if x.shape[1:] != h.shape[1:]:
            raise ValueError(
                f"spatial extents disagree: input {x.shape}, state {h.shape}"
            )
        z = ad.conv2d(x, self.wx, stride=1, padding="same")
        z = z + ad.conv2d(h, self.wh, stride=1, padding="same")
        z = z + ad.reshape(self.b, (4 * self.units, 1, 1))
        u = self.units
        i = ad.hard_sigmoid(z[0:u])
        f = ad.hard_sigmoid(z[u : 2 * u])
        g = ad.tanh(z[2 * u : 3 * u])
        o = ad.hard_sigmoid(z[3 * u : 4 * u])
        c_new = f * c + i * g
        h_new = o * ad.tanh(c_new)
        return h_new, RecurrentState(h_new, c_new)

    def params(self):
        return [self.wx, self.wh, self.b]

    def tracked(self):
        return []
