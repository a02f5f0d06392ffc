"""Numba ``@njit`` kernels (default path).

The convolutions gather one output row of input windows into a column
matrix and hand the channel contraction to a BLAS matmul (row-wise
im2col), which is an order of magnitude faster here than scalar loops.
Semantics match ``slnn.kernels.numpy_impl``; see the package docstring
for the shared conventions.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def _gather_row(xp, col, i, stride, kh, kw, wo):
    cin = xp.shape[0]
    idx = 0
    for c in range(cin):
        for p in range(kh):
            ib = i * stride + p
            for q in range(kw):
                for j in range(wo):
                    col[idx, j] = xp[c, ib, j * stride + q]
                idx += 1


@njit(cache=True)
def conv2d_forward(xp, k, stride):
    cout, cin, kh, kw = k.shape
    hp, wp = xp.shape[1], xp.shape[2]
    ho = (hp - kh) // stride + 1
    wo = (wp - kw) // stride + 1
    kk = np.ascontiguousarray(k).reshape(cout, cin * kh * kw)
    col = np.empty((cin * kh * kw, wo))
    y = np.empty((cout, ho, wo))
    for i in range(ho):
        _gather_row(xp, col, i, stride, kh, kw, wo)
        y[:, i, :] = kk @ col
    return y


@njit(cache=True)
def conv2d_grad_input(g, k, stride, hp, wp):
    cout, cin, kh, kw = k.shape
    ho, wo = g.shape[1], g.shape[2]
    kk = np.ascontiguousarray(k).reshape(cout, cin * kh * kw)
    kkt = np.ascontiguousarray(kk.T)
    gi = np.empty((cout, wo))
    gx = np.zeros((cin, hp, wp))
    for i in range(ho):
        for o in range(cout):
            gi[o] = g[o, i]
        colg = kkt @ gi  # [cin*kh*kw, wo]
        idx = 0
        for c in range(cin):
            for p in range(kh):
                ib = i * stride + p
                for q in range(kw):
                    for j in range(wo):
                        gx[c, ib, j * stride + q] += colg[idx, j]
                    idx += 1
    return gx


@njit(cache=True)
def conv2d_grad_kernels(g, xp, stride, kh, kw):
    cout, ho, wo = g.shape
    cin = xp.shape[0]
    col = np.empty((cin * kh * kw, wo))
    gi = np.empty((cout, wo))
    gk = np.zeros((cout, cin * kh * kw))
    for i in range(ho):
        _gather_row(xp, col, i, stride, kh, kw, wo)
        for o in range(cout):
            gi[o] = g[o, i]
        gk += gi @ col.T
    return gk.reshape(cout, cin, kh, kw)


@njit(cache=True)
def deconv2d_forward(y, k, stride):
    cin, cout = k.shape[0], k.shape[1]
    h, w = y.shape[1], y.shape[2]
    out = np.zeros((cout, h * stride, w * stride))
    for c in range(cin):
        for o in range(cout):
            for p in range(stride):
                for q in range(stride):
                    wgt = k[c, o, p, q]
                    for i in range(h):
                        ib = i * stride + p
                        for j in range(w):
                            out[o, ib, j * stride + q] += wgt * y[c, i, j]
    return out


@njit(cache=True)
def deconv2d_grad_input(g, k, stride):
    cin, cout = k.shape[0], k.shape[1]
    h, w = g.shape[1] // stride, g.shape[2] // stride
    gy = np.zeros((cin, h, w))
    for c in range(cin):
        for o in range(cout):
            for p in range(stride):
                for q in range(stride):
                    wgt = k[c, o, p, q]
                    for i in range(h):
                        ib = i * stride + p
                        for j in range(w):
                            gy[c, i, j] += wgt * g[o, ib, j * stride + q]
    return gy


@njit(cache=True)
def deconv2d_grad_kernels(g, y, stride):
    cin = y.shape[0]
    cout = g.shape[0]
    h, w = y.shape[1], y.shape[2]
    gk = np.empty((cin, cout, stride, stride))
    for c in range(cin):
        for o in range(cout):
            for p in range(stride):
                for q in range(stride):
                    acc = 0.0
                    for i in range(h):
                        ib = i * stride + p
                        for j in range(w):
                            acc += y[c, i, j] * g[o, ib, j * stride + q]
                    gk[c, o, p, q] = acc
    return gk


@njit(cache=True)
def maxpool2d_forward(x, k, stride):
    c, h, w = x.shape
    ho = (h - k) // stride + 1
    wo = (w - k) // stride + 1
    out = np.empty((c, ho, wo))
    idx = np.empty((c, ho, wo), dtype=np.int64)
    for ci in range(c):
        for i in range(ho):
            i0 = i * stride
            for j in range(wo):
                j0 = j * stride
                best = x[ci, i0, j0]
                bi, bj = i0, j0
                for p in range(k):
                    for q in range(k):
                        v = x[ci, i0 + p, j0 + q]
                        if v > best:
                            best = v
                            bi, bj = i0 + p, j0 + q
                out[ci, i, j] = best
                idx[ci, i, j] = bi * w + bj
    return out, idx


@njit(cache=True)
def maxpool2d_grad(g, idx, h, w):
    c, ho, wo = g.shape
    gx = np.zeros((c, h, w))
    for ci in range(c):
        for i in range(ho):
            for j in range(wo):
                f = idx[ci, i, j]
                gx[ci, f // w, f % w] += g[ci, i, j]
    return gx
