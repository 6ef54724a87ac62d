"""Numba-compiled convolution and pooling loops.

Only the hot loops are compiled; elementwise ops, dense layers (BLAS)
and softmax reuse the numpy backend. float32 inputs whose per-output
reduction exceeds the 64-bit accumulation threshold are routed to the
numpy path, which upcasts.
"""

from __future__ import annotations

import numpy as np
from numba import njit

from ..tensor import ACC_TERM_LIMIT
from . import numpy_backend as _ref

relu = _ref.relu
relu_backward = _ref.relu_backward
dense_forward = _ref.dense_forward
dense_backward = _ref.dense_backward
softmax = _ref.softmax
softmax_backward = _ref.softmax_backward


@njit(cache=True)
def _conv_fwd(xp, w, b, stride, out):
    # Tap loops stay outermost so each output cell still accumulates in
    # c -> kh -> kw order; the inner j loop is contiguous and vectorizes.
    kn, cn, kh, kw = w.shape
    _, oh, ow = out.shape
    for k in range(kn):
        for c in range(cn):
            for a in range(kh):
                for bb in range(kw):
                    wv = w[k, c, a, bb]
                    for i in range(oh):
                        xrow = xp[c, i * stride + a]
                        orow = out[k, i]
                        for j in range(ow):
                            orow[j] += xrow[j * stride + bb] * wv
        for i in range(oh):
            for j in range(ow):
                out[k, i, j] += b[k]


@njit(cache=True)
def _conv_bwd(xp, w, up, stride, gxp, gw, gb):
    kn, cn, kh, kw = w.shape
    _, oh, ow = up.shape
    for k in range(kn):
        for i in range(oh):
            for j in range(ow):
                gb[k] += up[k, i, j]
        for c in range(cn):
            for a in range(kh):
                for bb in range(kw):
                    wv = w[k, c, a, bb]
                    acc = gw[k, c, a, bb]  # zeros; pins the accumulator dtype
                    for i in range(oh):
                        uprow = up[k, i]
                        xrow = xp[c, i * stride + a]
                        gxrow = gxp[c, i * stride + a]
                        for j in range(ow):
                            gxrow[j * stride + bb] += uprow[j] * wv
                            acc += uprow[j] * xrow[j * stride + bb]
                    gw[k, c, a, bb] = acc


@njit(cache=True)
def _pool_fwd(x, window, stride, out, argmax):
    cn, _, w = x.shape
    _, oh, ow = out.shape
    for c in range(cn):
        for i in range(oh):
            for j in range(ow):
                best = x[c, i * stride, j * stride]
                besty = i * stride
                bestx = j * stride
                for a in range(window):
                    for b in range(window):
                        v = x[c, i * stride + a, j * stride + b]
                        if v > best:  # strict: first row-major max wins
                            best = v
                            besty = i * stride + a
                            bestx = j * stride + b
                out[c, i, j] = best
                argmax[c, i, j] = besty * w + bestx


@njit(cache=True)
def _pool_bwd(up, argmax, gx_flat):
    cn, oh, ow = up.shape
    for c in range(cn):
        for i in range(oh):
            for j in range(ow):
                gx_flat[c, argmax[c, i, j]] += up[c, i, j]


def conv2d_forward(x, w, b, stride, pad):
    k, c, kh, kw = w.shape
    if x.dtype == np.float32 and c * kh * kw > ACC_TERM_LIMIT:
        return _ref.conv2d_forward(x, w, b, stride, pad)
    oh = (x.shape[1] + 2 * pad - kh) // stride + 1
    ow = (x.shape[2] + 2 * pad - kw) // stride + 1
    out = np.zeros((k, oh, ow), dtype=x.dtype)
    _conv_fwd(_ref._pad_hw(x, pad), w, b, stride, out)
    return out


def conv2d_backward(x, w, upstream, stride, pad):
    k, c, kh, kw = w.shape
    long_fwd = c * kh * kw > ACC_TERM_LIMIT
    long_gw = upstream[0].size > ACC_TERM_LIMIT
    if x.dtype == np.float32 and (long_fwd or long_gw):
        return _ref.conv2d_backward(x, w, upstream, stride, pad)
    xp = _ref._pad_hw(x, pad)
    gxp = np.zeros_like(xp)
    gw = np.zeros_like(w)
    gb = np.zeros_like(upstream, shape=(k,))
    _conv_bwd(xp, w, upstream, stride, gxp, gw, gb)
    if pad:
        gxp = np.ascontiguousarray(gxp[:, pad : pad + x.shape[1], pad : pad + x.shape[2]])
    return gxp, gw, gb


def maxpool_forward(x, window, stride):
    c, h, w = x.shape
    oh = (h - window) // stride + 1
    ow = (w - window) // stride + 1
    out = np.empty((c, oh, ow), dtype=x.dtype)
    argmax = np.empty((c, oh, ow), dtype=np.int64)
    _pool_fwd(x, window, stride, out, argmax)
    return out, argmax


def maxpool_backward(upstream, argmax, input_shape):
    c, h, w = input_shape
    gx = np.zeros((c, h * w), dtype=upstream.dtype)
    _pool_bwd(upstream, argmax, gx)
    return gx.reshape(c, h, w)
