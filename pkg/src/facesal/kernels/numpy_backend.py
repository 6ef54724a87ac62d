"""Pure-numpy layer kernels: the fallback backend and the reference math.

Inputs are assumed validated by the dispatch layer (`facesal.kernels`).
Convolution is cross-correlation: no kernel flip.
"""

from __future__ import annotations

import numpy as np

from ..tensor import matmul_acc, reduce_sum


def _pad_hw(x: np.ndarray, pad: int) -> np.ndarray:
    if pad == 0:
        return x
    return np.pad(x, ((0, 0), (pad, pad), (pad, pad)))


def _im2col(xp: np.ndarray, kh: int, kw: int, stride: int, oh: int, ow: int) -> np.ndarray:
    # [C,Hp,Wp] -> [C*kh*kw, oh*ow] taking one strided slice per kernel tap
    c = xp.shape[0]
    cols = np.empty((c, kh, kw, oh, ow), dtype=xp.dtype)
    for a in range(kh):
        for b in range(kw):
            cols[:, a, b] = xp[:, a : a + oh * stride : stride, b : b + ow * stride : stride]
    return cols.reshape(c * kh * kw, oh * ow)


def conv2d_forward(x, w, b, stride, pad):
    k, c, kh, kw = w.shape
    oh = (x.shape[1] + 2 * pad - kh) // stride + 1
    ow = (x.shape[2] + 2 * pad - kw) // stride + 1
    cols = _im2col(_pad_hw(x, pad), kh, kw, stride, oh, ow)
    out = matmul_acc(w.reshape(k, c * kh * kw), cols) + b[:, None]
    return np.ascontiguousarray(out.reshape(k, oh, ow))


def conv2d_backward(x, w, upstream, stride, pad):
    k, c, kh, kw = w.shape
    _, oh, ow = upstream.shape
    xp = _pad_hw(x, pad)
    cols = _im2col(xp, kh, kw, stride, oh, ow)
    up = upstream.reshape(k, oh * ow)

    gw = matmul_acc(up, cols.T).reshape(k, c, kh, kw)
    gb = reduce_sum(up, axis=1)
    gcols = matmul_acc(w.reshape(k, -1).T, up).reshape(c, kh, kw, oh, ow)

    # Scatter back: within one (a,b) tap the destinations are disjoint,
    # so a strided += per tap is an exact col2im.
    gxp = np.zeros_like(xp)
    for a in range(kh):
        for b in range(kw):
            gxp[:, a : a + oh * stride : stride, b : b + ow * stride : stride] += gcols[:, a, b]
    if pad:
        gxp = gxp[:, pad : pad + x.shape[1], pad : pad + x.shape[2]]
    return np.ascontiguousarray(gxp), gw, gb


def relu(x):
    return np.maximum(x, x.dtype.type(0))


def relu_backward(x, upstream):
    # gradient at exactly 0 is defined as 0
    return np.where(x > 0, upstream, upstream.dtype.type(0))


def maxpool_forward(x, window, stride):
    c, h, w = x.shape
    oh = (h - window) // stride + 1
    ow = (w - window) // stride + 1
    win = np.empty((c, window * window, oh, ow), dtype=x.dtype)
    t = 0
    for a in range(window):
        for b in range(window):
            win[:, t] = x[:, a : a + oh * stride : stride, b : b + ow * stride : stride]
            t += 1
    # argmax returns the first maximum; taps are stacked row-major, which
    # realizes the first-in-row-major tie break.
    local = win.argmax(axis=1)
    out = np.take_along_axis(win, local[:, None], axis=1)[:, 0]
    rows = (np.arange(oh) * stride)[None, :, None] + local // window
    cols = (np.arange(ow) * stride)[None, None, :] + local % window
    argmax = (rows * w + cols).astype(np.int64)
    return np.ascontiguousarray(out), argmax


def maxpool_backward(upstream, argmax, input_shape):
    c, h, w = input_shape
    gx = np.zeros((c, h * w), dtype=upstream.dtype)
    n = argmax[0].size
    ch = np.repeat(np.arange(c), n)
    np.add.at(gx, (ch, argmax.reshape(-1)), upstream.reshape(-1))
    return gx.reshape(c, h, w)


def dense_forward(x, w, b):
    return matmul_acc(w, x) + b


def dense_backward(x, w, upstream):
    gx = matmul_acc(w.T, upstream)
    gw = np.outer(upstream, x)
    gb = upstream.copy()
    return gx, gw, gb


def softmax(z):
    # computed and returned in float64 so the probabilities sum to 1
    # within 1e-9 regardless of the pipeline dtype
    z64 = z.astype(np.float64)
    e = np.exp(z64 - z64.max())
    return e / e.sum()


def softmax_backward(probs, upstream):
    up = upstream.astype(np.float64)
    return probs * (up - float(np.dot(up, probs)))
