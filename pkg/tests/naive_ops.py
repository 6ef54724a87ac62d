"""Independent oracles for the kernel and backprop tests.

Everything here is written as plain Python loops over float64 arrays,
deliberately sharing no code with the package, so agreement between the
two is evidence rather than tautology.
"""

import math

import numpy as np


def rel_err(a, b):
    """Relative L2 distance, safe for near-zero pairs."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    denom = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return float(np.linalg.norm(a - b)) / denom


def naive_conv2d(x, w, b, stride=1, pad=0):
    """Cross-correlation by quadruple loop."""
    x = np.asarray(x, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    c, h, ww = x.shape
    k, _, kh, kw = w.shape
    if pad:
        x = np.pad(x, ((0, 0), (pad, pad), (pad, pad)))
    oh = (h + 2 * pad - kh) // stride + 1
    ow = (ww + 2 * pad - kw) // stride + 1
    out = np.zeros((k, oh, ow))
    for f in range(k):
        for i in range(oh):
            for j in range(ow):
                total = 0.0
                for ch in range(c):
                    for a in range(kh):
                        for bb in range(kw):
                            total += x[ch, i * stride + a, j * stride + bb] * w[f, ch, a, bb]
                out[f, i, j] = total + b[f]
    return out


def naive_maxpool(x, window, stride=None):
    """Max pooling; ties resolved to the first window cell in row-major order."""
    stride = window if stride is None else stride
    x = np.asarray(x, dtype=np.float64)
    c, h, w = x.shape
    oh = (h - window) // stride + 1
    ow = (w - window) // stride + 1
    out = np.zeros((c, oh, ow))
    arg = np.zeros((c, oh, ow), dtype=np.int64)
    for ch in range(c):
        for i in range(oh):
            for j in range(ow):
                best = -math.inf
                where = 0
                for a in range(window):
                    for bb in range(window):
                        y, xx = i * stride + a, j * stride + bb
                        if x[ch, y, xx] > best:
                            best = x[ch, y, xx]
                            where = y * w + xx
                out[ch, i, j] = best
                arg[ch, i, j] = where
    return out, arg


def naive_dense(x, w, b):
    x = np.asarray(x, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    out = np.zeros(w.shape[0])
    for u in range(w.shape[0]):
        total = 0.0
        for v in range(w.shape[1]):
            total += w[u, v] * x[v]
        out[u] = total + b[u]
    return out


def naive_softmax(x):
    x = np.asarray(x, dtype=np.float64)
    shifted = np.array([math.exp(v - max(x)) for v in x])
    return shifted / shifted.sum()


def naive_guided_backward(layers, activations, argmaxes, y):
    """Clipped backward chain over a recorded forward trace.

    ``layers`` is a list of dicts: {"kind": ..., plus per-kind fields
    (w, b, stride, pad for conv; w, b for dense; window/stride for
    maxpool)}. ``activations`` holds A_0..A_N as float64; ``argmaxes``
    maps layer index to the pooling argmax grid. Starts from the onehot
    probability gradient and rectifies after every layer's step.
    """
    grad = np.zeros(activations[-1].shape[0])
    grad[y] = 1.0
    for i in reversed(range(len(layers))):
        layer = layers[i]
        kind = layer["kind"]
        x = activations[i]
        if kind == "softmax":
            probs = activations[i + 1]
            dot = float(np.dot(grad, probs))
            grad = probs * (grad - dot)
        elif kind == "dense":
            grad = np.array([sum(layer["w"][u, v] * grad[u]
                                 for u in range(layer["w"].shape[0]))
                             for v in range(layer["w"].shape[1])])
        elif kind == "flatten":
            grad = grad.reshape(x.shape)
        elif kind == "relu":
            grad = np.where(x > 0, grad, 0.0)
        elif kind == "maxpool":
            out = np.zeros(x.shape)
            arg = argmaxes[i]
            c, oh, ow = arg.shape
            w = x.shape[2]
            for ch in range(c):
                for a in range(oh):
                    for bb in range(ow):
                        flat = arg[ch, a, bb]
                        out[ch, flat // w, flat % w] += grad[ch, a, bb]
            grad = out
        elif kind == "conv":
            w_arr, stride, pad = layer["w"], layer["stride"], layer["pad"]
            k, c, kh, kw = w_arr.shape
            padded = np.zeros((c, x.shape[1] + 2 * pad, x.shape[2] + 2 * pad))
            for f in range(k):
                for i2 in range(grad.shape[1]):
                    for j2 in range(grad.shape[2]):
                        for ch in range(c):
                            for a in range(kh):
                                for bb in range(kw):
                                    padded[ch, i2 * stride + a, j2 * stride + bb] += \
                                        grad[f, i2, j2] * w_arr[f, ch, a, bb]
            grad = padded[:, pad:pad + x.shape[1], pad:pad + x.shape[2]]
        grad = np.maximum(grad, 0.0)
    return grad


def finite_diff(fn, x, eps=1e-4):
    """Central-difference gradient of a scalar function of one array."""
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.ravel()
    gflat = grad.ravel()
    for i in range(flat.size):
        original = flat[i]
        flat[i] = original + eps
        hi = fn(x)
        flat[i] = original - eps
        lo = fn(x)
        flat[i] = original
        gflat[i] = (hi - lo) / (2.0 * eps)
    return grad
