"""Dense tensor plumbing shared by every numeric module.

A tensor is a plain numpy array: row-major, C-contiguous, at least one
axis, every axis of length >= 1. Pipeline arithmetic runs in float32;
float64 is accepted everywhere for high-precision checks. Reductions
spanning more than ``ACC_TERM_LIMIT`` terms accumulate in float64 to
bound drift.
"""

from __future__ import annotations

import numpy as np

DEFAULT_DTYPE = np.dtype(np.float32)

# Sums longer than this accumulate in 64-bit regardless of tensor dtype.
ACC_TERM_LIMIT = 4096


class DimensionError(ValueError):
    """A shape violates an operation's contract."""


class DegenerateInputError(ValueError):
    """Input is structurally valid but has no usable variation."""


def as_tensor(data, dtype=None) -> np.ndarray:
    """Coerce ``data`` to a validated dense tensor.

    Floating inputs keep their dtype unless ``dtype`` says otherwise;
    everything else becomes float32.
    """
    arr = np.asarray(data)
    validate_tensor(arr)
    if dtype is not None:
        arr = arr.astype(dtype, copy=False)
    elif arr.dtype not in (np.float32, np.float64):
        arr = arr.astype(DEFAULT_DTYPE)
    return np.ascontiguousarray(arr)


def validate_tensor(arr: np.ndarray) -> None:
    if arr.ndim < 1:
        raise DimensionError("tensor must have at least one axis")
    if any(d < 1 for d in arr.shape):
        raise DimensionError(f"tensor axes must all be >= 1, got {arr.shape}")


def require_shape(name: str, arr: np.ndarray, shape) -> None:
    if tuple(arr.shape) != tuple(shape):
        raise DimensionError(
            f"{name}: expected shape {tuple(shape)}, got {tuple(arr.shape)}"
        )


def require_same_dtype(*arrays: np.ndarray) -> np.dtype:
    dtypes = {a.dtype for a in arrays}
    if len(dtypes) != 1:
        raise DimensionError(f"mixed tensor dtypes: {sorted(map(str, dtypes))}")
    return arrays[0].dtype


def reduce_sum(arr: np.ndarray, axis=None):
    """Sum with the 64-bit accumulation rule applied."""
    if axis is None:
        n = arr.size
    elif isinstance(axis, tuple):
        n = int(np.prod([arr.shape[a] for a in axis]))
    else:
        n = arr.shape[axis]
    if arr.dtype == np.float32 and n > ACC_TERM_LIMIT:
        return np.sum(arr, axis=axis, dtype=np.float64).astype(np.float32)
    return np.sum(arr, axis=axis)


def matmul_acc(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product, accumulating in float64 when the inner axis is long."""
    if a.dtype == np.float32 and a.shape[-1] > ACC_TERM_LIMIT:
        return (a.astype(np.float64) @ b.astype(np.float64)).astype(np.float32)
    return a @ b
