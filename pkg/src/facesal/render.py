"""8-bit PNG rendering of heatmaps and highlight masks.

Heatmaps go out as grayscale scaled to their own max; highlights go out
either standalone (white on black) or as a fixed-color alpha overlay on
a provided source image.
"""

from __future__ import annotations

import os

import numpy as np
from PIL import Image

from .saliency import BinaryMask
from .tensor import DimensionError

HIGHLIGHT_COLOR = (255, 64, 64)
HIGHLIGHT_ALPHA = 0.55


def heatmap_png(values: np.ndarray, path: str | os.PathLike) -> None:
    """Write an [H,W] heatmap as grayscale, scaled so its max maps to 255."""
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 2:
        raise DimensionError(f"heatmap must be [H,W], got {values.shape}")
    low, high = float(values.min()), float(values.max())
    if high > low:
        scaled = (values - low) / (high - low) * 255.0
    else:
        scaled = np.zeros_like(values)
    Image.fromarray(np.rint(scaled).astype(np.uint8), mode="L").save(path)


def _image_to_rgb(image: np.ndarray) -> np.ndarray:
    image = np.asarray(image)
    if image.ndim == 3:  # [C,H,W] floats in [0,1]
        if image.shape[0] == 1:
            image = image[0]
        else:
            rgb = np.transpose(image, (1, 2, 0))
            return np.rint(np.clip(rgb, 0.0, 1.0) * 255.0).astype(np.uint8)
    if image.dtype == np.uint8:
        gray = image
    else:
        gray = np.rint(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)
    return np.repeat(gray[:, :, None], 3, axis=2)


def overlay_png(mask, path: str | os.PathLike, source: np.ndarray | None = None) -> None:
    """Write a highlight mask, blended over ``source`` when given.

    Without a source the mask renders white on black. With one, masked
    pixels blend toward HIGHLIGHT_COLOR at fixed alpha.
    """
    bits = mask.bits if isinstance(mask, BinaryMask) else np.asarray(mask, dtype=np.uint8)
    if bits.ndim != 2:
        raise DimensionError(f"mask must be [H,W], got {bits.shape}")
    if source is None:
        Image.fromarray(bits * np.uint8(255), mode="L").save(path)
        return
    rgb = _image_to_rgb(source).astype(np.float64)
    if rgb.shape[:2] != bits.shape:
        raise DimensionError(f"source shape {rgb.shape[:2]} does not match "
                             f"mask shape {bits.shape}")
    color = np.array(HIGHLIGHT_COLOR, dtype=np.float64)
    where = bits.astype(bool)
    rgb[where] = (1.0 - HIGHLIGHT_ALPHA) * rgb[where] + HIGHLIGHT_ALPHA * color
    Image.fromarray(np.rint(rgb).astype(np.uint8), mode="RGB").save(path)
