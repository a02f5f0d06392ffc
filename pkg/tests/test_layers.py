"""Layer contracts: frozen examples, gradient checks, cell equivalences."""

import numpy as np
import pytest

from conftest import max_rel_err, numeric_grad
from slnn import autodiff as ad
from slnn.autodiff import Tensor
from slnn.layers import (
    BatchNormInput,
    ConvLSTMCell,
    Dense,
    LSTMCell,
    RecurrentState,
    activation,
    recurrent_dropout_mask,
)


class TestDense:
    def test_identity_weights(self):
        rng = np.random.default_rng(0)
        layer = Dense(3, 3, rng)
        layer.w.data = np.eye(3)
        layer.b.data = np.zeros(3)
        x = rng.standard_normal(3)
        np.testing.assert_allclose(layer(Tensor(x)).data, x)

    def test_hand_arithmetic(self):
        layer = Dense(2, 1, np.random.default_rng(0))
        layer.w.data = np.array([[1.0], [1.0]])
        layer.b.data = np.array([0.5])
        out = layer(Tensor(np.array([1.0, 2.0])))
        np.testing.assert_allclose(out.data, [3.5])

    def test_extent_mismatch(self):
        layer = Dense(4, 2, np.random.default_rng(0))
        with pytest.raises(ValueError, match="extent"):
            layer(Tensor(np.zeros(3)))

    def test_gradients_5_to_3(self):
        rng = np.random.default_rng(1)
        layer = Dense(5, 3, rng)
        x = rng.standard_normal(5)
        seed = rng.standard_normal(3)

        def run(arrays):
            layer.w.data, layer.b.data = arrays[1], arrays[2]
            return float((layer(Tensor(arrays[0])).data * seed).sum())

        xt = Tensor(x)
        arrays = [x, layer.w.data.copy(), layer.b.data.copy()]
        layer(xt).backward(seed)
        grads = [xt.grad, layer.w.grad, layer.b.grad]
        for i in range(3):
            assert max_rel_err(grads[i], numeric_grad(run, arrays, i)) < 1e-4


class TestActivations:
    def test_hard_sigmoid_clamps(self):
        x = Tensor(np.array([0.0, 3.0, -2.5, 2.5, -3.0]))
        np.testing.assert_allclose(
            activation(x, "hard_sigmoid").data, [0.5, 1.0, 0.0, 1.0, 0.0]
        )

    def test_relu(self):
        x = Tensor(np.array([-1.0, 2.0]))
        np.testing.assert_array_equal(activation(x, "relu").data, [0.0, 2.0])

    def test_tanh_gradient_at_zero_is_one(self):
        x = Tensor(np.zeros(1))
        activation(x, "tanh").backward(np.ones(1))
        assert x.grad[0] == 1.0

    def test_unknown_kind(self):
        with pytest.raises(ValueError, match="activation"):
            activation(Tensor(np.zeros(1)), "gelu")


class TestBatchNormInput:
    def test_constant_input_gives_beta(self):
        bn = BatchNormInput(1)
        bn.beta.data = np.array([0.75])
        mask = np.ones((4, 4))
        out = bn(Tensor(np.full((1, 4, 4), 2.5)), mask, training=True)
        np.testing.assert_allclose(out.data, np.full((1, 4, 4), 0.75))

    def test_standardized_input_nearly_unchanged(self):
        rng = np.random.default_rng(2)
        x = rng.standard_normal((1, 6, 6))
        x = (x - x.mean()) / x.std()
        bn = BatchNormInput(1)
        out = bn(Tensor(x), np.ones((6, 6)), training=True)
        np.testing.assert_allclose(out.data, x / np.sqrt(1.0 + 1e-3), atol=1e-12)

    def test_infer_mode_with_unit_running_stats(self):
        rng = np.random.default_rng(3)
        x = rng.standard_normal((1, 4, 4))
        bn = BatchNormInput(1)
        out = bn(Tensor(x), np.ones((4, 4)), training=False)
        np.testing.assert_allclose(out.data, x / np.sqrt(1.0 + 1e-3), atol=1e-12)

    def test_all_masked_rejected(self):
        bn = BatchNormInput(1)
        with pytest.raises(ValueError, match="non-masked"):
            bn(Tensor(np.zeros((1, 4, 4))), np.zeros((4, 4)), training=True)

    def test_masked_stats_ignore_land(self):
        bn = BatchNormInput(1)
        mask = np.zeros((2, 2))
        mask[0] = 1.0
        x = np.array([[[1.0, 3.0], [999.0, -999.0]]])
        out = bn(Tensor(x), mask, training=True)
        # stats from the two ocean cells only: mean 2, var 1
        np.testing.assert_allclose(
            out.data[0, 0], [(1 - 2) / np.sqrt(1 + 1e-3), (3 - 2) / np.sqrt(1 + 1e-3)]
        )

    def test_running_stats_momentum(self):
        bn = BatchNormInput(1)
        x = np.full((1, 4, 4), 2.0)
        bn(Tensor(x), np.ones((4, 4)), training=True)
        np.testing.assert_allclose(bn.running_mean, [0.99 * 0.0 + 0.01 * 2.0])
        np.testing.assert_allclose(bn.running_var, [0.99 * 1.0 + 0.01 * 0.0])

    def test_gradients_through_masked_stats(self):
        rng = np.random.default_rng(4)
        x = rng.standard_normal((2, 3, 3))
        mask = (rng.random((3, 3)) < 0.7).astype(float)
        mask[0, 0] = 1.0
        gamma = rng.standard_normal(2) + 1.5
        beta = rng.standard_normal(2)
        seed = rng.standard_normal((2, 3, 3))
        bn = BatchNormInput(2)

        def run(arrays):
            bn.gamma.data, bn.beta.data = arrays[1], arrays[2]
            out = bn(Tensor(arrays[0]), mask, training=True)
            return float((out.data * seed).sum())

        bn.gamma.data, bn.beta.data = gamma.copy(), beta.copy()
        xt = Tensor(x)
        bn(xt, mask, training=True).backward(seed)
        grads = [xt.grad, bn.gamma.grad, bn.beta.grad]
        arrays = [x, gamma, beta]
        for i in range(3):
            assert max_rel_err(grads[i], numeric_grad(run, arrays, i)) < 1e-4


class TestRecurrentDropout:
    def test_rate_zero_all_ones(self):
        mask = recurrent_dropout_mask((5, 5), 0.0, np.random.default_rng(0))
        np.testing.assert_array_equal(mask, np.ones((5, 5)))

    def test_drop_fraction_at_08(self):
        mask = recurrent_dropout_mask(100_000, 0.8, np.random.default_rng(1))
        zero_frac = float((mask == 0).mean())
        assert 0.79 <= zero_frac <= 0.81
        # surviving entries carry the inverse keep probability
        np.testing.assert_allclose(mask[mask != 0], 1.0 / 0.2)

    def test_same_seed_same_mask(self):
        a = recurrent_dropout_mask((20,), 0.5, np.random.default_rng(7))
        b = recurrent_dropout_mask((20,), 0.5, np.random.default_rng(7))
        np.testing.assert_array_equal(a, b)

    def test_rate_one_rejected(self):
        with pytest.raises(ValueError, match="rate"):
            recurrent_dropout_mask((3,), 1.0, np.random.default_rng(0))


class TestLSTMCell:
    def test_zero_weights_zero_output(self):
        rng = np.random.default_rng(5)
        cell = LSTMCell(4, 3, rng)
        cell.w.data[:] = 0.0
        cell.u.data[:] = 0.0
        cell.b.data[:] = 0.0
        h, state = cell.step(Tensor(rng.standard_normal(4)), cell.zero_state())
        np.testing.assert_array_equal(h.data, np.zeros(3))

    def test_saturated_gates_carry_memory(self):
        # forget gate biased fully open, input gate fully closed: c' == c
        cell = LSTMCell(2, 2, np.random.default_rng(6))
        cell.w.data[:] = 0.0
        cell.u.data[:] = 0.0
        cell.b.data[:] = 0.0
        cell.b.data[2:4] = 10.0  # forget block -> hard_sigmoid saturates at 1
        cell.b.data[0:2] = -10.0  # input block -> 0
        state = RecurrentState(Tensor(np.zeros(2)), Tensor(np.ones(2)))
        _, new_state = cell.step(Tensor(np.zeros(2)), state)
        np.testing.assert_allclose(new_state.c.data, [1.0, 1.0], atol=1e-12)

    def test_forget_bias_initialized_to_one(self):
        cell = LSTMCell(3, 2, np.random.default_rng(0))
        np.testing.assert_array_equal(cell.b.data[2:4], [1.0, 1.0])
        np.testing.assert_array_equal(cell.b.data[:2], [0.0, 0.0])

    def test_shape_mismatch_rejected(self):
        cell = LSTMCell(3, 2, np.random.default_rng(0))
        with pytest.raises(ValueError, match="extent"):
            cell.step(Tensor(np.zeros(4)), cell.zero_state())

    def test_gradients_through_three_chained_steps(self):
        rng = np.random.default_rng(8)
        cell = LSTMCell(3, 2, rng)
        xs = rng.standard_normal((3, 3))

        def forward(w, u, b, xs_arr):
            cell.w.data, cell.u.data, cell.b.data = w, u, b
            state = cell.zero_state()
            total = None
            for t in range(3):
                h, state = cell.step(Tensor(xs_arr[t]), state)
                s = ad.tsum(h)
                total = s if total is None else total + s
            return total

        arrays = [cell.w.data.copy(), cell.u.data.copy(), cell.b.data.copy(), xs]
        loss = forward(*arrays)
        loss.backward()
        grads = [cell.w.grad, cell.u.grad, cell.b.grad]

        def run(arrs):
            return forward(*arrs).item()

        for i in range(3):
            assert max_rel_err(grads[i], numeric_grad(run, arrays, i)) < 1e-4


class TestConvLSTMCell:
    def test_zero_kernels_zero_output(self):
        rng = np.random.default_rng(9)
        cell = ConvLSTMCell(2, 3, 3, rng)
        cell.wx.data[:] = 0.0
        cell.wh.data[:] = 0.0
        cell.b.data[:] = 0.0
        h, _ = cell.step(Tensor(rng.standard_normal((2, 4, 4))), cell.zero_state(4, 4))
        np.testing.assert_array_equal(h.data, np.zeros((3, 4, 4)))

    def test_spatial_mismatch_rejected(self):
        cell = ConvLSTMCell(1, 2, 3, np.random.default_rng(0))
        with pytest.raises(ValueError, match="extents"):
            cell.step(Tensor(np.zeros((1, 4, 4))), cell.zero_state(5, 5))

    def test_parameter_count_formula(self):
        cell = ConvLSTMCell(32, 40, 3, np.random.default_rng(0))
        total = cell.wx.size + cell.wh.size + cell.b.size
        assert total == 4 * 40 * 9 * 32 + 4 * 40 * 9 * 40 + 4 * 40 == 103_840

    def test_reduces_to_lstm_on_1x1_grid(self):
        # same-padding 3x3 conv of a 1x1 field uses only the center tap, so
        # the cell must match an LSTM built from those center taps
        rng = np.random.default_rng(10)
        for trial in range(20):
            n_in, units = 3, 4
            conv_cell = ConvLSTMCell(n_in, units, 3, rng)
            lstm_cell = LSTMCell(n_in, units, rng)
            lstm_cell.w.data = conv_cell.wx.data[:, :, 1, 1].T.copy()
            lstm_cell.u.data = conv_cell.wh.data[:, :, 1, 1].T.copy()
            lstm_cell.b.data = conv_cell.b.data.copy()
            x = rng.standard_normal(n_in)
            h0 = rng.standard_normal(units)
            c0 = rng.standard_normal(units)
            hc, sc = conv_cell.step(
                Tensor(x.reshape(n_in, 1, 1)),
                RecurrentState(Tensor(h0.reshape(units, 1, 1)), Tensor(c0.reshape(units, 1, 1))),
            )
            hl, sl = lstm_cell.step(
                Tensor(x), RecurrentState(Tensor(h0), Tensor(c0))
            )
            np.testing.assert_allclose(hc.data.ravel(), hl.data, atol=1e-12, rtol=0)
            np.testing.assert_allclose(sc.c.data.ravel(), sl.c.data, atol=1e-12, rtol=0)

    def test_gradients_through_three_chained_steps(self):
        rng = np.random.default_rng(11)
        cell = ConvLSTMCell(2, 2, 3, rng)
        xs = rng.standard_normal((3, 2, 3, 3))

        def forward(wx, wh, b, xs_arr):
            cell.wx.data, cell.wh.data, cell.b.data = wx, wh, b
            state = cell.zero_state(3, 3)
            total = None
            for t in range(3):
                h, state = cell.step(Tensor(xs_arr[t]), state)
                s = ad.tsum(h)
                total = s if total is None else total + s
            return total

        arrays = [cell.wx.data.copy(), cell.wh.data.copy(), cell.b.data.copy(), xs]
        loss = forward(*arrays)
        loss.backward()
        grads = [cell.wx.grad, cell.wh.grad, cell.b.grad]

        def run(arrs):
            return forward(*arrs).item()

        for i in range(3):
            assert max_rel_err(grads[i], numeric_grad(run, arrays, i)) < 1e-4


def test_forward_backward_leave_parameters_unchanged():
    rng = np.random.default_rng(12)
    cell = LSTMCell(3, 2, rng)
    before = [p.data.copy() for p in cell.params()]
    h, _ = cell.step(Tensor(rng.standard_normal(3)), cell.zero_state())
    ad.tsum(h).backward()
    for p, old in zip(cell.params(), before):
        np.testing.assert_array_equal(p.data, old)
