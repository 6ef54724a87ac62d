"""Layer kernels with a selectable numeric backend.

``FACESAL_BACKEND=numpy`` forces the pure-numpy path. The default
(``auto``) compiles the convolution/pooling loops with numba and falls
back to numpy when numba is unavailable. Both backends implement the
same math; results may differ only by float reassociation.

All public functions validate shapes/dtypes and raise
:class:`facesal.tensor.DimensionError` on contract violations.
"""

from __future__ import annotations

import os

import numpy as np

from ..tensor import DimensionError, as_tensor, require_same_dtype, require_shape

_env = os.environ.get("FACESAL_BACKEND", "auto").strip().lower()
if _env in ("", "auto"):
    try:
        from . import numba_backend as _impl

        BACKEND = "numba"
    except ImportError:  # pragma: no cover - depends on environment
        from . import numpy_backend as _impl

        BACKEND = "numpy"
elif _env == "numpy":
    from . import numpy_backend as _impl

    BACKEND = "numpy"
elif _env == "numba":
    from . import numba_backend as _impl

    BACKEND = "numba"
else:  # pragma: no cover
    raise RuntimeError(f"FACESAL_BACKEND must be 'auto', 'numpy' or 'numba', got {_env!r}")


def get_backend() -> str:
    """Name of the active backend ('numba' or 'numpy')."""
    return BACKEND


def _check_chw(name: str, x: np.ndarray) -> np.ndarray:
    x = as_tensor(x)
    if x.ndim != 3:
        raise DimensionError(f"{name} must be [C,H,W], got shape {tuple(x.shape)}")
    return x


def conv2d_forward(x, w, b, stride: int = 1, pad: int = 0) -> np.ndarray:
    """Cross-correlate [C,H,W] with kernels [K,C,kh,kw] plus bias [K].

    Zero padding of ``pad`` on each spatial edge; output side lengths are
    floor((H + 2*pad - kh)/stride) + 1 and the same for W.
    """
    x, w, b = _check_chw("input", x), as_tensor(w), as_tensor(b)
    if w.ndim != 4:
        raise DimensionError(f"kernels must be [K,C,kh,kw], got shape {tuple(w.shape)}")
    k, c, kh, kw = w.shape
    require_shape("bias", b, (k,))
    require_same_dtype(x, w, b)
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    if pad < 0:
        raise ValueError(f"pad must be >= 0, got {pad}")
    if x.shape[0] != c:
        raise DimensionError(f"input has {x.shape[0]} channels, kernels expect {c}")
    if kh > x.shape[1] + 2 * pad or kw > x.shape[2] + 2 * pad:
        raise DimensionError(
            f"kernel {kh}x{kw} larger than padded input "
            f"{x.shape[1] + 2 * pad}x{x.shape[2] + 2 * pad}"
        )
    return _impl.conv2d_forward(x, w, b, stride, pad)


def conv2d_output_shape(input_shape, w_shape, stride: int, pad: int):
    c, h, wd = input_shape
    k, wc, kh, kw = w_shape
    if c != wc:
        raise DimensionError(f"input has {c} channels, kernels expect {wc}")
    oh = (h + 2 * pad - kh) // stride + 1
    ow = (wd + 2 * pad - kw) // stride + 1
    if kh > h + 2 * pad or kw > wd + 2 * pad:
        raise DimensionError(f"kernel {kh}x{kw} larger than padded input")
    return k, oh, ow


def conv2d_backward(x, w, upstream, stride: int = 1, pad: int = 0):
    """Gradients of conv2d_forward: (input_grad, kernel_grad, bias_grad)."""
    x, w, upstream = _check_chw("input", x), as_tensor(w), _check_chw("upstream", upstream)
    require_same_dtype(x, w, upstream)
    expected = conv2d_output_shape(x.shape, w.shape, stride, pad)
    require_shape("upstream", upstream, expected)
    return _impl.conv2d_backward(x, w, upstream, stride, pad)


def relu(x) -> np.ndarray:
    return _impl.relu(as_tensor(x))


def relu_backward(x, upstream) -> np.ndarray:
    x, upstream = as_tensor(x), as_tensor(upstream)
    require_shape("upstream", upstream, x.shape)
    return _impl.relu_backward(x, upstream)


def maxpool_forward(x, window: int, stride: int | None = None):
    """Per-window maximum over [C,H,W]; returns (output, flat argmax indices).

    Ties resolve to the first maximal element in row-major window order.
    """
    x = _check_chw("input", x)
    stride = window if stride is None else stride
    if window < 1 or stride < 1:
        raise ValueError("window and stride must be >= 1")
    if window > x.shape[1] or window > x.shape[2]:
        raise DimensionError(f"window {window} exceeds input {x.shape[1]}x{x.shape[2]}")
    return _impl.maxpool_forward(x, window, stride)


def maxpool_backward(upstream, argmax, input_shape) -> np.ndarray:
    """Route upstream gradient to the recorded argmax positions (additively)."""
    upstream = _check_chw("upstream", upstream)
    argmax = np.asarray(argmax)
    require_shape("argmax", argmax, upstream.shape)
    return _impl.maxpool_backward(upstream, argmax, tuple(input_shape))


def dense_forward(x, w, b) -> np.ndarray:
    x, w, b = as_tensor(x), as_tensor(w), as_tensor(b)
    if x.ndim != 1 or w.ndim != 2:
        raise DimensionError("dense expects 1-D input and [U,D] weights")
    u, d = w.shape
    if x.shape[0] != d:
        raise DimensionError(f"input length {x.shape[0]} does not match weight columns {d}")
    require_shape("bias", b, (u,))
    require_same_dtype(x, w, b)
    return _impl.dense_forward(x, w, b)


def dense_backward(x, w, upstream):
    """Gradients of dense_forward: (input_grad, weight_grad, bias_grad)."""
    x, w, upstream = as_tensor(x), as_tensor(w), as_tensor(upstream)
    require_shape("upstream", upstream, (w.shape[0],))
    require_shape("input", x, (w.shape[1],))
    require_same_dtype(x, w, upstream)
    return _impl.dense_backward(x, w, upstream)


def softmax(z) -> np.ndarray:
    """Max-shifted softmax; returns float64 probabilities summing to 1."""
    z = as_tensor(z)
    if z.ndim != 1:
        raise DimensionError(f"softmax expects a 1-D tensor, got shape {tuple(z.shape)}")
    return _impl.softmax(z)


def softmax_backward(probs, upstream) -> np.ndarray:
    probs, upstream = as_tensor(probs), as_tensor(upstream)
    require_shape("upstream", upstream, probs.shape)
    return _impl.softmax_backward(probs.astype(np.float64), upstream)
