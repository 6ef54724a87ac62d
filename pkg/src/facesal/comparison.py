"""Cross-source heatmap analyses: cohort averages, relative (individual
minus average) saliency with top-fraction highlighting, and a Jaccard
overlap score between human and classifier highlight masks.
"""

from __future__ import annotations

import numpy as np

from .saliency import BinaryMask, mask_top_fraction
from .tensor import DegenerateInputError, DimensionError

# Conventional highlight fractions for relative heatmaps.
HUMAN_TOP_FRACTION = 0.10
CLASSIFIER_TOP_FRACTION = 0.05


def average_heatmap(heatmaps: list[np.ndarray]) -> np.ndarray:
    """Elementwise mean of uniformly shaped [H,W] heatmaps, in float64."""
    if not heatmaps:
        raise ValueError("need at least one heatmap")
    arrays = [np.asarray(h) for h in heatmaps]
    shape = arrays[0].shape
    for arr in arrays:
        if arr.ndim != 2:
            raise DimensionError(f"heatmaps must be [H,W], got {arr.shape}")
        if arr.shape != shape:
            raise DimensionError(f"heatmap shapes differ: {arr.shape} vs {shape}")
    return np.stack(arrays).mean(axis=0, dtype=np.float64)


def relative_heatmap(individual: np.ndarray, average: np.ndarray,
                     top_fraction: float) -> tuple[np.ndarray, BinaryMask]:
    """Individual minus cohort average, plus its top-fraction highlight.

    The difference keeps its negative values; only the highlight is
    meant for export. Callers pass 0.10 for human box heatmaps and 0.05
    for classifier saliency heatmaps.
    """
    individual = np.asarray(individual, dtype=np.float64)
    average = np.asarray(average, dtype=np.float64)
    if individual.shape != average.shape:
        raise DimensionError(f"shape mismatch: {individual.shape} vs {average.shape}")
    diff = individual - average
    return diff, mask_top_fraction(diff, top_fraction)


def _mask_bits(mask) -> np.ndarray:
    bits = mask.bits if isinstance(mask, BinaryMask) else np.asarray(mask)
    if bits.ndim != 2:
        raise DimensionError(f"masks must be [H,W], got {bits.shape}")
    if not np.isin(bits, (0, 1)).all():
        raise ValueError("masks must be binary")
    return bits.astype(bool)


def overlap_score(mask_a, mask_b) -> float:
    """Jaccard overlap |A∩B| / |A∪B| of two binary masks."""
    a = _mask_bits(mask_a)
    b = _mask_bits(mask_b)
    if a.shape != b.shape:
        raise DimensionError(f"shape mismatch: {a.shape} vs {b.shape}")
    union = int(np.logical_or(a, b).sum())
    if union == 0:
        raise DegenerateInputError("both masks are empty: overlap undefined")
    return int(np.logical_and(a, b).sum()) / union
