"""Per-pixel saliency from clipped backprop gradients, plus the derived
quantities used downstream: top-fraction binary masks, class saliency
differences, per-class aggregated heatmaps, and the within-class ANOVA
R² consistency score.
"""

from __future__ import annotations

import json
import math
import os
import re
from dataclasses import dataclass

import numpy as np

from . import network
from .network import Checkpoint
from .tensor import DegenerateInputError, DimensionError

# Channel reductions accepted by gb_map.
REDUCTIONS = ("sum", "max")

PGM_MAXVAL = 65535


@dataclass(frozen=True)
class SaliencyMap:
    """Non-negative [H,W] pixel intensities for one image and one class."""

    image_id: str
    class_id: int
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values)
        if values.ndim != 2:
            raise DimensionError(f"saliency values must be [H,W], got {values.shape}")
        if np.any(values < 0):
            raise ValueError("saliency values must be non-negative")
        object.__setattr__(self, "values", values)

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


def retained_count(fraction: float, n_pixels: int) -> int:
    """ceil(fraction · n), guarded against float products like 0.1·100
    landing a hair above the integer they represent."""
    if not 0.0 < fraction <= 1.0:
        raise ValueError(f"fraction must be in (0, 1], got {fraction}")
    return max(1, math.ceil(fraction * n_pixels - 1e-9))


@dataclass(frozen=True)
class BinaryMask:
    """A {0,1} pixel mask retaining exactly ceil(fraction · H·W) pixels."""

    bits: np.ndarray
    retained_fraction: float

    def __post_init__(self):
        bits = np.asarray(self.bits)
        if bits.ndim != 2:
            raise DimensionError(f"mask bits must be [H,W], got {bits.shape}")
        if not np.isin(bits, (0, 1)).all():
            raise ValueError("mask bits must be 0 or 1")
        bits = bits.astype(np.uint8)
        expected = retained_count(self.retained_fraction, bits.size)
        ones = int(bits.sum())
        if ones != expected:
            raise ValueError(f"mask has {ones} ones, fraction "
                             f"{self.retained_fraction} requires {expected}")
        object.__setattr__(self, "bits", bits)

    @property
    def shape(self) -> tuple[int, int]:
        return self.bits.shape

    def count(self) -> int:
        return int(self.bits.sum())


def gb_map(checkpoint: Checkpoint, image, y: int, image_id: str = "",
           reduction: str = "sum") -> SaliencyMap:
    """Clipped-backprop saliency of class ``y`` on one image.

    The [C,H,W] gradient map collapses to [H,W] by summing over channels
    (``reduction="max"`` is the alternative). Either way non-negativity
    is preserved.
    """
    if reduction not in REDUCTIONS:
        raise ValueError(f"reduction must be one of {REDUCTIONS}")
    _, trace = network.forward(checkpoint, image)
    grad = network.guided_backward(checkpoint, trace, y)
    values = grad.sum(axis=0) if reduction == "sum" else grad.max(axis=0)
    return SaliencyMap(image_id, int(y), values)


def mask_top_fraction(values: np.ndarray, fraction: float) -> BinaryMask:
    """Mark the ``fraction`` highest-valued pixels of a real [H,W] array.

    Exactly ceil(fraction · H·W) pixels are retained; ties at the cut
    go to the lower row-major index.
    """
    values = np.asarray(values)
    if values.ndim != 2:
        raise DimensionError(f"expected an [H,W] array, got {values.shape}")
    k = retained_count(fraction, values.size)
    order = np.argsort(-values.ravel().astype(np.float64), kind="stable")
    bits = np.zeros(values.size, dtype=np.uint8)
    bits[order[:k]] = 1
    return BinaryMask(bits.reshape(values.shape), fraction)


def top_percent_mask(smap: SaliencyMap, p: float) -> BinaryMask:
    """Top-p mask of a saliency map (p in (0,1], e.g. 0.05 for 5%)."""
    return mask_top_fraction(smap.values, p)


def saliency_difference(checkpoint: Checkpoint, image, y: int, z: int) -> np.ndarray:
    """Rectified difference of two classes' saliency on one image:
    relu(gb(y) − gb(z)). Pixels favoring class z over y read as zero."""
    if int(y) == int(z):
        raise ValueError("saliency_difference needs two distinct classes")
    a = gb_map(checkpoint, image, y).values
    b = gb_map(checkpoint, image, z).values
    return np.maximum(a - b, np.zeros((), dtype=a.dtype))


def class_saliency_heatmap(maps: list[SaliencyMap], p_filter: float = 0.05,
                           p_highlight: float = 0.05) -> tuple[np.ndarray, BinaryMask]:
    """Average the per-map top-p_filter indicators, then highlight the
    top p_highlight of the average. Heatmap values lie in [0,1]."""
    if not maps:
        raise ValueError("need at least one saliency map")
    shape = maps[0].shape
    for m in maps:
        if m.shape != shape:
            raise DimensionError(f"map shapes differ: {m.shape} vs {shape}")
    stack = np.stack([top_percent_mask(m, p_filter).bits for m in maps])
    heatmap = stack.mean(axis=0, dtype=np.float64)
    return heatmap, mask_top_fraction(heatmap, p_highlight)


def consistency_r2(maps: list[SaliencyMap]) -> float:
    """Share of total variation across maps explained by their class ids.

    One-way ANOVA with each map flattened to a vector: R² is the ratio
    of between-class to total sum of squares, pooled over pixels.
    Requires at least two classes and two maps per class.
    """
    if not maps:
        raise ValueError("need at least one saliency map")
    shape = maps[0].shape
    groups: dict[int, list[np.ndarray]] = {}
    for m in maps:
        if m.shape != shape:
            raise DimensionError(f"map shapes differ: {m.shape} vs {shape}")
        groups.setdefault(m.class_id, []).append(m.values.ravel().astype(np.float64))
    if len(groups) < 2:
        raise ValueError("consistency needs maps from at least two classes")
    for class_id, vecs in groups.items():
        if len(vecs) < 2:
            raise ValueError(f"class {class_id} has fewer than two maps")
    data = np.stack([v for vecs in groups.values() for v in vecs])
    grand = data.mean(axis=0)
    ss_total = float(np.sum((data - grand) ** 2))
    ss_between = 0.0
    for vecs in groups.values():
        class_mean = np.stack(vecs).mean(axis=0)
        ss_between += len(vecs) * float(np.sum((class_mean - grand) ** 2))
    if ss_total == 0.0:
        raise DegenerateInputError("all maps identical: R2 undefined")
    return ss_between / ss_total


def _sidecar_path(path: str | os.PathLike) -> str:
    return f"{os.fspath(path)}.json"


def save_map(smap: SaliencyMap, path: str | os.PathLike) -> None:
    """Write a 16-bit PGM scaled by the map's max, plus a JSON sidecar
    recording {image_id, class_id, max_value} for lossless rescaling."""
    values = smap.values.astype(np.float64)
    h, w = values.shape
    max_value = float(values.max())
    if max_value > 0:
        quantized = np.rint(values / max_value * PGM_MAXVAL)
    else:
        quantized = np.zeros_like(values)
    header = f"P5\n{w} {h}\n{PGM_MAXVAL}\n".encode("ascii")
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(quantized.astype(">u2").tobytes())
    with open(_sidecar_path(path), "w", encoding="utf-8") as fh:
        json.dump({"image_id": smap.image_id, "class_id": smap.class_id,
                   "max_value": max_value}, fh)
        fh.write("\n")


def load_map(path: str | os.PathLike) -> SaliencyMap:
    """Read a map written by save_map back into float32 intensities."""
    with open(path, "rb") as fh:
        blob = fh.read()
    match = re.match(rb"P5\s+(\d+)\s+(\d+)\s+(\d+)\s", blob)
    if match is None:
        raise ValueError(f"{path}: not a P5 PGM file")
    w, h, maxval = (int(g) for g in match.groups())
    if maxval != PGM_MAXVAL:
        raise ValueError(f"{path}: expected maxval {PGM_MAXVAL}, got {maxval}")
    raw = blob[match.end():]
    if len(raw) != 2 * w * h:
        raise ValueError(f"{path}: pixel payload is {len(raw)} bytes, "
                         f"expected {2 * w * h}")
    quantized = np.frombuffer(raw, dtype=">u2").reshape(h, w)
    with open(_sidecar_path(path), encoding="utf-8") as fh:
        meta = json.load(fh)
    scale = float(meta["max_value"]) / PGM_MAXVAL
    values = (quantized.astype(np.float64) * scale).astype(np.float32)
    return SaliencyMap(meta["image_id"], int(meta["class_id"]), values)
