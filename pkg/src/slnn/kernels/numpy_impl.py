"""Vectorized pure-numpy kernels (fallback path).

Every spatial tap (p, q) contributes one matrix product between a channel
matrix and a strided view of the field, so the heavy lifting lands in
BLAS while the Python-level loop stays k*k short.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def _tap_view(xp, p, q, ho, wo, stride):
    return xp[
        :,
        p : p + (ho - 1) * stride + 1 : stride,
        q : q + (wo - 1) * stride + 1 : stride,
    ]


def conv2d_forward(xp, k, stride):
    """Cross-correlate padded input xp [Cin,Hp,Wp] with k [Cout,Cin,kh,kw]."""
    cout, cin, kh, kw = k.shape
    hp, wp = xp.shape[1], xp.shape[2]
    ho = (hp - kh) // stride + 1
    wo = (wp - kw) // stride + 1
    y = np.zeros((cout, ho, wo))
    for p in range(kh):
        for q in range(kw):
            win = _tap_view(xp, p, q, ho, wo, stride).reshape(cin, ho * wo)
            y += (k[:, :, p, q] @ win).reshape(cout, ho, wo)
    return y


def conv2d_grad_input(g, k, stride, hp, wp):
    """Gradient wrt the padded input; g is [Cout,Ho,Wo]."""
    cout, cin, kh, kw = k.shape
    ho, wo = g.shape[1], g.shape[2]
    gflat = g.reshape(cout, ho * wo)
    gx = np.zeros((cin, hp, wp))
    for p in range(kh):
        for q in range(kw):
            _tap_view(gx, p, q, ho, wo, stride)[...] += (
                k[:, :, p, q].T @ gflat
            ).reshape(cin, ho, wo)
    return gx


def conv2d_grad_kernels(g, xp, stride, kh, kw):
    cout, ho, wo = g.shape
    cin = xp.shape[0]
    gflat = g.reshape(cout, ho * wo)
    gk = np.empty((cout, cin, kh, kw))
    for p in range(kh):
        for q in range(kw):
            win = _tap_view(xp, p, q, ho, wo, stride).reshape(cin, ho * wo)
            gk[:, :, p, q] = gflat @ win.T
    return gk


def deconv2d_forward(y, k, stride):
    """Transposed convolution, kernel extent == stride: exact upsampling.

    y is [Cin,h,w], k is [Cin,Cout,s,s]; output [Cout,h*s,w*s].
    """
    cin, cout = k.shape[0], k.shape[1]
    h, w = y.shape[1], y.shape[2]
    yflat = y.reshape(cin, h * w)
    out = np.empty((cout, h * stride, w * stride))
    for p in range(stride):
        for q in range(stride):
            out[:, p::stride, q::stride] = (k[:, :, p, q].T @ yflat).reshape(
                cout, h, w
            )
    return out


def deconv2d_grad_input(g, k, stride):
    cin, cout = k.shape[0], k.shape[1]
    h, w = g.shape[1] // stride, g.shape[2] // stride
    gy = np.zeros((cin, h, w))
    for p in range(stride):
        for q in range(stride):
            gsub = np.ascontiguousarray(g[:, p::stride, q::stride]).reshape(
                cout, h * w
            )
            gy += (k[:, :, p, q] @ gsub).reshape(cin, h, w)
    return gy


def deconv2d_grad_kernels(g, y, stride):
    cin = y.shape[0]
    cout = g.shape[0]
    h, w = y.shape[1], y.shape[2]
    yflat = y.reshape(cin, h * w)
    gk = np.empty((cin, cout, stride, stride))
    for p in range(stride):
        for q in range(stride):
            gsub = np.ascontiguousarray(g[:, p::stride, q::stride]).reshape(
                cout, h * w
            )
            gk[:, :, p, q] = yflat @ gsub.T
    return gk


def maxpool2d_forward(x, k, stride):
    """Max over k*k windows; returns (maxima, flat argmax indices into H*W)."""
    c, h, w = x.shape
    ho = (h - k) // stride + 1
    wo = (w - k) // stride + 1
    win = sliding_window_view(x, (k, k), axis=(1, 2))[:, ::stride, ::stride]
    flat = win.reshape(c, ho, wo, k * k)
    local = flat.argmax(axis=3)
    out = np.take_along_axis(flat, local[..., None], axis=3)[..., 0]
    pi, pj = np.divmod(local, k)
    ii = (np.arange(ho) * stride)[None, :, None] + pi
    jj = (np.arange(wo) * stride)[None, None, :] + pj
    return np.ascontiguousarray(out), (ii * w + jj).astype(np.int64)


def maxpool2d_grad(g, idx, h, w):
    c = g.shape[0]
    gx = np.zeros((c, h * w))
    for ci in range(c):
        np.add.at(gx[ci], idx[ci].ravel(), g[ci].ravel())
    return gx.reshape(c, h, w)
