"""Grayscale preprocessing that turns thumbnails into matched dark-background
representations for correlation matching.

The reference pipeline (equalize, invert, bright-floor, rescale, background
zeroing) and the target pipeline (dark-floor, blur, invert) are intentionally
different: reference slides are typically H&E while targets span IHC and
special stains with very different intensity statistics.

All integer conversion is round-half-up; both pipelines are deterministic.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimMismatchError
from .geometry import BBox

# bright-floor applied to the inverted reference; near-black pixels there are
# background that would otherwise dominate the later min-max rescale
REFERENCE_DARK_FLOOR = 50
# target pixels darker than this are scanner artifacts, forced to white
TARGET_ARTIFACT_CEIL = 30


def round_half_up(x: np.ndarray) -> np.ndarray:
    """Elementwise round with halves going up (numpy rounds halves to even)."""
    return np.floor(np.asarray(x, dtype=np.float64) + 0.5)


def to_grayscale(img: np.ndarray) -> np.ndarray:
    """Luma conversion g = round(0.299 R + 0.587 G + 0.114 B)."""
    if img.ndim == 2:
        return img.astype(np.uint8, copy=True)
    rgb = img.astype(np.float64)
    g = 0.299 * rgb[:, :, 0] + 0.587 * rgb[:, :, 1] + 0.114 * rgb[:, :, 2]
    return np.clip(round_half_up(g), 0, 255).astype(np.uint8)


def histogram_equalize(img: np.ndarray) -> np.ndarray:
    """CDF remap: out(v) = round(255 (cdf(v) - cdf_min) / (N - cdf_min)).

    cdf_min is the smallest nonzero CDF value. Constant images are returned
    unchanged (the remap is undefined when N == cdf_min).
    """
    hist = np.bincount(img.ravel(), minlength=256)
    cdf = np.cumsum(hist)
    n = int(cdf[-1])
    cdf_min = int(cdf[np.nonzero(hist)[0][0]])
    if n == cdf_min:
        return img.copy()
    lut = np.clip(round_half_up(255.0 * (cdf - cdf_min) / (n - cdf_min)), 0, 255)
    return lut.astype(np.uint8)[img]


def invert(img: np.ndarray) -> np.ndarray:
    return (255 - img.astype(np.int16)).astype(np.uint8)


def rescale_minmax(img: np.ndarray) -> np.ndarray:
    """Affine stretch to [0, 255]; constant images map to all zeros."""
    lo = int(img.min())
    hi = int(img.max())
    if hi == lo:
        return np.zeros_like(img)
    out = round_half_up((img.astype(np.float64) - lo) / (hi - lo) * 255.0)
    return out.astype(np.uint8)


def box_blur3(img: np.ndarray) -> np.ndarray:
    """3x3 box blur with replicated borders, exact integer rounding."""
    padded = np.pad(img.astype(np.int32), 1, mode="edge")
    acc = np.zeros(img.shape, dtype=np.int32)
    for dr in range(3):
        for dc in range(3):
            acc += padded[dr:dr + img.shape[0], dc:dc + img.shape[1]]
    # round-half-up of acc/9 in pure integer arithmetic
    return ((2 * acc + 9) // 18).astype(np.uint8)


@dataclass
class PreprocessedImage:
    """A matching-ready grayscale raster.

    kind is "reference" or "target". For references, origin_bbox records
    where the crop sits in thumbnail coordinates and mask is the dilated
    tissue mask (1 inside tissue); every pixel outside it is zero.
    """

    image: np.ndarray
    kind: str
    origin_bbox: BBox | None = None
    mask: np.ndarray | None = None


def preprocess_reference(crop: np.ndarray, dilated_mask: np.ndarray,
                         origin_bbox: BBox | None = None) -> PreprocessedImage:
    """Reference pipeline: grayscale, equalize, invert, bright-floor,
    min-max rescale, then zero everything outside the dilated tissue mask."""
    if crop.shape[:2] != dilated_mask.shape:
        raise DimMismatchError(
            f"crop {crop.shape[:2]} vs mask {dilated_mask.shape}")
    g = to_grayscale(crop)
    g = histogram_equalize(g)
    g = invert(g)
    g = np.where(g < REFERENCE_DARK_FLOOR, np.uint8(255), g)
    g = rescale_minmax(g)
    g = np.where(dilated_mask == 0, np.uint8(0), g)
    return PreprocessedImage(image=g, kind="reference",
                             origin_bbox=origin_bbox, mask=dilated_mask.copy())


def preprocess_target(thumb: np.ndarray) -> PreprocessedImage:
    """Target pipeline: grayscale, dark-artifact floor to white, blur, invert."""
    g = to_grayscale(thumb)
    g = np.where(g < TARGET_ARTIFACT_CEIL, np.uint8(255), g)
    g = box_blur3(g)
    g = invert(g)
    return PreprocessedImage(image=g, kind="target")
