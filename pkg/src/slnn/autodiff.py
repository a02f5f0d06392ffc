"""Reverse-mode automatic differentiation over dense float64 arrays.

A ``Tensor`` wraps a numpy array plus the bookkeeping needed to replay the
chain rule: the parent tensors it was computed from and a closure that
scatters an incoming gradient back to them.  Calling ``backward()`` on a
scalar result walks the graph in reverse topological order and accumulates
``.grad`` on every tensor, so leaf parameters can be read off afterwards.

Raw numpy arrays and Python scalars mix freely with tensors in arithmetic;
they are treated as constants and receive no gradient.  All math is double
precision, and every operation is deterministic (bit-identical outputs for
identical inputs under a fixed kernel backend).
"""

import numpy as np

from slnn import kernels


class Tensor:
    """Node of the computation graph: value, parents, and backward rule."""

    __slots__ = ("data", "grad", "name", "_prev", "_backward")

    def __init__(self, data, prev=(), backward=None, name=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.name = name
        self._prev = prev
        self._backward = backward

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = g.copy()
        else:
            self.grad = self.grad + g

    def backward(self, seed=None):
        """Accumulate d(self)/d(node) into ``.grad`` over the whole graph."""
        if seed is None:
            if self.data.size != 1:
                raise ValueError(
                    f"backward() without a seed needs a scalar, got shape {self.shape}"
                )
            seed = np.ones_like(self.data)
        topo = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._prev:
                if id(parent) not in visited:
                    stack.append((parent, False))
        self._accumulate(np.asarray(seed, dtype=np.float64))
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- arithmetic ---------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return add(self, _neg_operand(other))

    def __rsub__(self, other):
        return add(neg(self), other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return getitem(self, key)

    def reshape(self, *shape):
        return reshape(self, shape)

    def sum(self, axis=None):
        return tsum(self, axis)

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag})"


def as_tensor(x, name=None):
    return x if isinstance(x, Tensor) else Tensor(x, name=name)


def parameter(data, name):
    """Leaf tensor meant to be updated by an optimizer."""
    return Tensor(np.array(data, dtype=np.float64), name=name)


def _const(x):
    return np.asarray(x, dtype=np.float64)


def _neg_operand(x):
    return neg(x) if isinstance(x, Tensor) else -_const(x)


def _unbroadcast(grad, shape):
    """Sum a broadcast gradient back down to ``shape``."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def add(a, b):
    at, bt = isinstance(a, Tensor), isinstance(b, Tensor)
    av = a.data if at else _const(a)
    bv = b.data if bt else _const(b)
    out_data = av + bv
    prev = tuple(t for t, isT in ((a, at), (b, bt)) if isT)

    def backward(g):
        if at:
            a._accumulate(_unbroadcast(g, av.shape))
        if bt:
            b._accumulate(_unbroadcast(g, bv.shape))

    return Tensor(out_data, prev, backward)


def mul(a, b):
    at, bt = isinstance(a, Tensor), isinstance(b, Tensor)
    av = a.data if at else _const(a)
    bv = b.data if bt else _const(b)
    out_data = av * bv
    prev = tuple(t for t, isT in ((a, at), (b, bt)) if isT)

    def backward(g):
        if at:
            a._accumulate(_unbroadcast(g * bv, av.shape))
        if bt:
            b._accumulate(_unbroadcast(g * av, bv.shape))

    return Tensor(out_data, prev, backward)


def neg(a):
    def backward(g):
        a._accumulate(-g)

    return Tensor(-a.data, (a,), backward)


def pow_const(a, p):
    """Elementwise a**p for a constant exponent."""
    out_data = a.data**p

    def backward(g):
        a._accumulate(g * p * a.data ** (p - 1.0))

    return Tensor(out_data, (a,), backward)


def matmul(a, b):
    """Matrix product; 1-D operands follow numpy's vector conventions."""
    a, b = as_tensor(a), as_tensor(b)
    ka = a.shape[-1] if a.ndim >= 1 else None
    kb = b.shape[0] if b.ndim >= 1 else None
    if a.ndim not in (1, 2) or b.ndim not in (1, 2):
        raise ValueError(f"matmul supports 1-D/2-D operands, got {a.shape} @ {b.shape}")
    if ka != kb:
        raise ValueError(f"matmul inner extents disagree: {a.shape} @ {b.shape}")
    out_data = a.data @ b.data

    def backward(g):
        if a.ndim == 1 and b.ndim == 2:
            a._accumulate(g @ b.data.T)
            b._accumulate(np.outer(a.data, g))
        elif a.ndim == 2 and b.ndim == 1:
            a._accumulate(np.outer(g, b.data))
            b._accumulate(a.data.T @ g)
        elif a.ndim == 1 and b.ndim == 1:
            a._accumulate(g * b.data)
            b._accumulate(g * a.data)
        else:
            a._accumulate(g @ b.data.T)
            b._accumulate(a.data.T @ g)

    return Tensor(out_data, (a, b), backward)


def getitem(a, key):
    out_data = a.data[key]
    if not isinstance(out_data, np.ndarray):
        out_data = np.asarray(out_data)

    def backward(g):
        full = np.zeros_like(a.data)
        full[key] = g
        a._accumulate(full)

    return Tensor(out_data, (a,), backward)


def reshape(a, shape):
    old = a.data.shape

    def backward(g):
        a._accumulate(g.reshape(old))

    return Tensor(a.data.reshape(shape), (a,), backward)


def tsum(a, axis=None):
    out_data = a.data.sum(axis=axis)

    def backward(g):
        if axis is None:
            a._accumulate(np.broadcast_to(g, a.data.shape).astype(np.float64))
        else:
            a._accumulate(np.broadcast_to(np.expand_dims(g, axis), a.data.shape))

    return Tensor(out_data, (a,), backward)


# -- activations -------------------------------------------------------


def relu(a):
    mask = a.data > 0.0

    def backward(g):
        a._accumulate(g * mask)

    return Tensor(np.where(mask, a.data, 0.0), (a,), backward)


def tanh(a):
    t = np.tanh(a.data)

    def backward(g):
        a._accumulate(g * (1.0 - t * t))

    return Tensor(t, (a,), backward)


def hard_sigmoid(a):
    """max(0, min(1, 0.2*x + 0.5)); slope 0.2 inside the linear band."""
    out_data = np.clip(0.2 * a.data + 0.5, 0.0, 1.0)
    band = (a.data > -2.5) & (a.data < 2.5)

    def backward(g):
        a._accumulate(g * 0.2 * band)

    return Tensor(out_data, (a,), backward)


# -- spatial primitives -------------------------------------------------


def _same_padding(extent, k, stride):
    out = -(-extent // stride)
    total = max((out - 1) * stride + k - extent, 0)
    return total // 2, total - total // 2


def conv2d(x, k, bias=None, stride=1, padding="same"):
    """2-D cross-correlation of x [Cin,H,W] with kernels k [Cout,Cin,kH,kW].

    ``padding`` is "same" (zero padding, output extent ceil(H/stride)) or
    "valid".  ``bias`` is one value per output channel or None.
    """
    x, k = as_tensor(x), as_tensor(k)
    if x.ndim != 3 or k.ndim != 4:
        raise ValueError(f"conv2d expects x [Cin,H,W], kernels [Cout,Cin,kH,kW]; got {x.shape}, {k.shape}")
    if stride < 1:
        raise ValueError(f"conv2d stride must be >= 1, got {stride}")
    cout, cin, kh, kw = k.shape
    if cin != x.shape[0]:
        raise ValueError(
            f"channel mismatch: kernels {k.shape} expect C_in={cin}, "
            f"input {x.shape} has C_in={x.shape[0]}"
        )
    h, w = x.shape[1], x.shape[2]
    if padding == "same":
        pt, pb = _same_padding(h, kh, stride)
        pl, pr = _same_padding(w, kw, stride)
    elif padding == "valid":
        pt = pb = pl = pr = 0
    else:
        raise ValueError(f"padding must be 'same' or 'valid', got {padding!r}")
    hp, wp = h + pt + pb, w + pl + pr
    if kh > hp or kw > wp:
        raise ValueError(
            f"kernel {kh}x{kw} exceeds padded input extents {hp}x{wp}"
        )
    xp = np.zeros((cin, hp, wp))
    xp[:, pt : pt + h, pl : pl + w] = x.data
    out_data = kernels.conv2d_forward(xp, k.data, stride)

    def backward(g):
        g = np.ascontiguousarray(g)
        gxp = kernels.conv2d_grad_input(g, k.data, stride, hp, wp)
        x._accumulate(gxp[:, pt : pt + h, pl : pl + w])
        k._accumulate(kernels.conv2d_grad_kernels(g, xp, stride, kh, kw))

    out = Tensor(out_data, (x, k), backward)
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (cout,):
            raise ValueError(f"bias must have shape ({cout},), got {bias.shape}")
        out = add(out, reshape(bias, (cout, 1, 1)))
    return out


def deconv2d(y, k, bias=None, stride=1):
    """Transposed convolution, fixed to kernel extent == stride.

    y is [Cin,h,w], kernels are [Cin,Cout,s,s]; output [Cout,h*s,w*s] is an
    exact stride-factor upsampling (no overlap).  Adjoint of ``conv2d``
    with the same kernel array, stride s and valid padding.
    """
    y, k = as_tensor(y), as_tensor(k)
    if stride < 1:
        raise ValueError(f"deconv2d stride must be >= 1, got {stride}")
    if y.ndim != 3 or k.ndim != 4:
        raise ValueError(f"deconv2d expects y [Cin,h,w], kernels [Cin,Cout,kH,kW]; got {y.shape}, {k.shape}")
    cin, cout, kh, kw = k.shape
    if kh != stride or kw != stride:
        raise ValueError(
            f"deconv2d kernel extent must equal stride ({stride}), got {kh}x{kw}"
        )
    if cin != y.shape[0]:
        raise ValueError(
            f"channel mismatch: kernels {k.shape} expect C_in={cin}, "
            f"input {y.shape} has C_in={y.shape[0]}"
        )
    out_data = kernels.deconv2d_forward(y.data, k.data, stride)

    def backward(g):
        g = np.ascontiguousarray(g)
        y._accumulate(kernels.deconv2d_grad_input(g, k.data, stride))
        k._accumulate(kernels.deconv2d_grad_kernels(g, y.data, stride))

    out = Tensor(out_data, (y, k), backward)
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (cout,):
            raise ValueError(f"bias must have shape ({cout},), got {bias.shape}")
        out = add(out, reshape(bias, (cout, 1, 1)))
    return out


def maxpool2d(x, k, stride):
    """Max pooling; backward routes each window's gradient to its argmax
    (first-encountered cell on ties)."""
    x = as_tensor(x)
    if x.ndim != 3:
        raise ValueError(f"maxpool2d expects x [C,H,W], got {x.shape}")
    c, h, w = x.shape
    if h < k or w < k or (h - k) % stride or (w - k) % stride:
        need_h = (stride - (h - k) % stride) % stride if h >= k else k - h
        need_w = (stride - (w - k) % stride) % stride if w >= k else k - w
        raise ValueError(
            f"maxpool2d extents {h}x{w} incompatible with k={k}, stride={stride}; "
            f"pad by {need_h} rows and {need_w} cols"
        )
    out_data, idx = kernels.maxpool2d_forward(x.data, k, stride)

    def backward(g):
        x._accumulate(kernels.maxpool2d_grad(np.ascontiguousarray(g), idx, h, w))

    return Tensor(out_data, (x,), backward)


def check_finite(t, context):
    data = t.data if isinstance(t, Tensor) else t
    if not np.all(np.isfinite(data)):
        raise FloatingPointError(f"non-finite values in {context}")
    return t
