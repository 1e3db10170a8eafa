"""Tissue foreground detection on thumbnails.

Intensity gating proposes candidate pixels, a patch classifier confirms
tissue within sliding windows, and the resulting mask yields the
registration ROI plus dilated and block-level variants.

The classifier is pluggable: any callable mapping a 256x256 RGB patch to a
tissue/background decision works. The built-in default is a conservative
gate-fraction heuristic so the pipeline runs without a trained model.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import cv2
import numpy as np
from scipy import ndimage

from .errors import EmptyMaskError
from .geometry import BBox
from .preprocess import to_grayscale

WHITE_GATE = 230
BLACK_GATE = 20
PATCH_SIZE = 256
PATCH_STRIDE = 64
DEFAULT_TISSUE_FRACTION = 0.05
DILATION_SIZE = 7
ROI_COVERAGE = 0.98
ROI_DEGENERATE_PX = 8  # below this the density window is distrusted

PatchClassifier = Callable[[np.ndarray], bool]


@dataclass
class BlockMask:
    """Majority vote of a mask over a square block grid.

    grid dims are ceil(mask dims / block_size); edge blocks vote over their
    actual (clipped) footprint.
    """

    block_size: int
    grid: np.ndarray


def gate_mask(thumb: np.ndarray, white: int = WHITE_GATE, black: int = BLACK_GATE) -> np.ndarray:
    """Candidate tissue pixels: strictly between the black and white gates."""
    g = to_grayscale(thumb)
    return ((g > black) & (g < white)).astype(np.uint8)


def default_classifier(patch: np.ndarray) -> bool:
    """Tissue iff at least 5% of pixels pass the default intensity gates."""
    gate = gate_mask(patch)
    return gate.mean() >= DEFAULT_TISSUE_FRACTION


def classify_patches(thumb: np.ndarray, gate: np.ndarray,
                     classifier: PatchClassifier = default_classifier,
                     patch: int = PATCH_SIZE, stride: int = PATCH_STRIDE) -> np.ndarray:
    """Slide a patch window over the thumbnail and paint accepted footprints.

    Windows with zero gate-pass pixels are skipped without a vote; accepted
    windows OR their whole footprint into the output. The trailing window on
    each axis is clamped to end at the image edge. Thumbnails smaller than
    one patch fall back to classifying the whole image as a single resized
    window.
    """
    if not patch >= stride >= 1:
        raise ValueError("need patch >= stride >= 1")
    rows, cols = gate.shape
    out = np.zeros_like(gate)
    if rows < patch or cols < patch:
        if gate.sum() == 0:
            return out
        resized = cv2.resize(thumb, (patch, patch), interpolation=cv2.INTER_LINEAR)
        if classifier(resized):
            out[:, :] = 1
        return out
    for r0 in _window_starts(rows, patch, stride):
        for c0 in _window_starts(cols, patch, stride):
            window_gate = gate[r0:r0 + patch, c0:c0 + patch]
            if not window_gate.any():
                continue
            if classifier(thumb[r0:r0 + patch, c0:c0 + patch]):
                out[r0:r0 + patch, c0:c0 + patch] = 1
    return out


def extract_roi(mask: np.ndarray, coverage: float = ROI_COVERAGE) -> BBox:
    """Registration ROI: smallest dense window per axis.

    Rows first: the shortest row range holding >= coverage of all foreground.
    Columns are then chosen on the row-restricted mask against the same
    absolute threshold, so the final box is guaranteed to enclose >= coverage
    of the total foreground. If either window degenerates below
    ROI_DEGENERATE_PX the density approach is distrusted and both axes fall
    back to a 1%/99% cumulative trim.
    """
    total = int(mask.sum())
    if total == 0:
        raise EmptyMaskError("mask has no foreground")
    need = coverage * total
    row_marginal = mask.sum(axis=1)
    r0, r1 = _smallest_window(row_marginal, need)
    col_marginal = mask[r0:r1].sum(axis=0)
    c0, c1 = _smallest_window(col_marginal, need)
    if (r1 - r0) < ROI_DEGENERATE_PX or (c1 - c0) < ROI_DEGENERATE_PX:
        r0, r1 = _percentile_trim(row_marginal, total)
        c0, c1 = _percentile_trim(mask.sum(axis=0), total)
    return BBox(int(r0), int(c0), int(r1), int(c1))


def dilate_mask(mask: np.ndarray) -> np.ndarray:
    """Morphological dilation with a 7x7 square element, borders background."""
    structure = np.ones((DILATION_SIZE, DILATION_SIZE), dtype=bool)
    return ndimage.binary_dilation(mask.astype(bool), structure=structure).astype(np.uint8)


def block_mask(mask: np.ndarray, block: int) -> BlockMask:
    """Block-level majority vote: 1 iff foreground fraction >= 0.5."""
    if block < 1:
        raise ValueError("block must be >= 1")
    rows, cols = mask.shape
    grid_rows = -(-rows // block)
    grid_cols = -(-cols // block)
    grid = np.zeros((grid_rows, grid_cols), dtype=np.uint8)
    for i in range(grid_rows):
        for j in range(grid_cols):
            footprint = mask[i * block:min((i + 1) * block, rows),
                             j * block:min((j + 1) * block, cols)]
            grid[i, j] = 1 if footprint.mean() >= 0.5 else 0
    return BlockMask(block_size=block, grid=grid)


# -- mask cache --------------------------------------------------------------

def save_mask_cache(cache_dir, mask: np.ndarray, roi: BBox, digest: str) -> None:
    """Persist a computed mask + ROI keyed by thumbnail content hash."""
    from .slide_io import write_image

    cache_dir = Path(cache_dir)
    cache_dir.mkdir(parents=True, exist_ok=True)
    write_image(cache_dir / f"mask_{digest[:16]}.png", mask * np.uint8(255))
    meta = {"content_hash": digest,
            "roi": [roi.row0, roi.col0, roi.row1, roi.col1]}
    (cache_dir / f"mask_{digest[:16]}.json").write_text(json.dumps(meta, indent=2))


def load_mask_cache(cache_dir, digest: str) -> tuple[np.ndarray, BBox] | None:
    """Fetch a cached mask + ROI; None on miss or hash mismatch."""
    from PIL import Image

    cache_dir = Path(cache_dir)
    png = cache_dir / f"mask_{digest[:16]}.png"
    meta_path = cache_dir / f"mask_{digest[:16]}.json"
    if not (png.exists() and meta_path.exists()):
        return None
    meta = json.loads(meta_path.read_text())
    if meta.get("content_hash") != digest:
        return None
    mask = (np.asarray(Image.open(png)) > 0).astype(np.uint8)
    r = meta["roi"]
    return mask, BBox(r[0], r[1], r[2], r[3])


# -- internals ---------------------------------------------------------------

def _window_starts(extent: int, window: int, stride: int) -> list[int]:
    starts = list(range(0, extent - window + 1, stride))
    if starts[-1] != extent - window:
        starts.append(extent - window)
    return starts


def _smallest_window(marginal: np.ndarray, need: float) -> tuple[int, int]:
    """First smallest half-open window whose sum reaches `need`."""
    n = len(marginal)
    best = (n + 1, 0, n)
    acc = 0.0
    lo = 0
    for hi in range(n):
        acc += marginal[hi]
        while acc - marginal[lo] >= need:
            acc -= marginal[lo]
            lo += 1
        if acc >= need and (hi - lo + 1) < best[0]:
            best = (hi - lo + 1, lo, hi + 1)
    return best[1], best[2]


def _percentile_trim(marginal: np.ndarray, total: int,
                     lo_q: float = 0.01, hi_q: float = 0.99) -> tuple[int, int]:
    cum = np.cumsum(marginal)
    lo = int(np.searchsorted(cum, lo_q * total, side="left"))
    hi = int(np.searchsorted(cum, hi_q * total, side="left"))
    return lo, max(hi + 1, lo + 1)
