"""Fixed-size overlapping tiling of aligned native crops.

Reference and aligned targets share one tile plan computed on the template
footprint, so equal grid indices always cover identical native coordinates:
that is the pairing guarantee downstream training pipelines rely on.
"""
from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np

from .errors import ExtentTooSmallError, InvalidNameError
from .foreground import BlockMask

TILE_SIZE = 256
TILE_OVERLAP = 0.2
_NAME_RE = re.compile(r"^([^_/\\]+)_([^_/\\]+)_r(\d{3})_c(\d{3})\.png$")


@dataclass(frozen=True)
class TileSpec:
    """One planned tile: native top-left, size, and grid position."""

    row0: int
    col0: int
    size: int
    grid_row: int
    grid_col: int


def plan_tiles(extent: tuple[int, int], size: int = TILE_SIZE,
               overlap: float = TILE_OVERLAP) -> list[TileSpec]:
    """Plan overlapping tiles covering the extent.

    stride = size - round(size * overlap). Starts run {0, stride, ...}; a
    start whose tile would overrun is clamped to extent - size (clamping
    rather than padding keeps the grid-index pairing exact), and duplicate
    starts after clamping collapse.
    """
    if not 0 <= overlap < 1:
        raise ValueError(f"overlap {overlap} outside [0, 1)")
    rows, cols = extent
    if size > rows or size > cols:
        raise ExtentTooSmallError(f"extent {extent} smaller than tile {size}")
    stride = size - int(np.floor(size * overlap + 0.5))
    if stride < 1:
        raise ValueError("overlap too large: stride would be zero")
    row_starts = _axis_starts(rows, size, stride)
    col_starts = _axis_starts(cols, size, stride)
    return [
        TileSpec(row0=r, col0=c, size=size, grid_row=gi, grid_col=gj)
        for gi, r in enumerate(row_starts)
        for gj, c in enumerate(col_starts)
    ]


def extract_tiles(aligned: np.ndarray, blocks: BlockMask,
                  plan: list[TileSpec],
                  block_px: int = TILE_SIZE) -> list[tuple[TileSpec, np.ndarray]]:
    """Cut planned tiles, keeping those whose covered blocks vote foreground.

    block_px is the side of one block in aligned-image pixels. A tile
    spanning several blocks (clamped tiles) is kept iff the majority of its
    covered block area is foreground.
    """
    kept = []
    grid = blocks.grid
    for spec in plan:
        fg_area = 0
        total = 0
        b_lo_r = spec.row0 // block_px
        b_hi_r = (spec.row0 + spec.size - 1) // block_px
        b_lo_c = spec.col0 // block_px
        b_hi_c = (spec.col0 + spec.size - 1) // block_px
        for bi in range(b_lo_r, b_hi_r + 1):
            for bj in range(b_lo_c, b_hi_c + 1):
                overlap_r = (min((bi + 1) * block_px, spec.row0 + spec.size)
                             - max(bi * block_px, spec.row0))
                overlap_c = (min((bj + 1) * block_px, spec.col0 + spec.size)
                             - max(bj * block_px, spec.col0))
                area = overlap_r * overlap_c
                total += area
                if bi < grid.shape[0] and bj < grid.shape[1] and grid[bi, bj]:
                    fg_area += area
        if 2 * fg_area >= total:
            tile = aligned[spec.row0:spec.row0 + spec.size,
                           spec.col0:spec.col0 + spec.size]
            kept.append((spec, tile))
    return kept


def encode_tile_name(stain: str, slide: str, grid_row: int, grid_col: int) -> str:
    """`{stain}_{slide}_r###_c###.png`, parseable by decode_tile_name.

    Underscores act as the format's separators, so they are rejected in the
    labels along with path separators; grid indices above 999 would break
    the fixed-width fields and are rejected rather than widened.
    """
    for label in (stain, slide):
        if not label or any(ch in label for ch in "_/\\"):
            raise InvalidNameError(f"label {label!r} contains separator characters")
    if not (0 <= grid_row <= 999 and 0 <= grid_col <= 999):
        raise InvalidNameError(f"grid index ({grid_row}, {grid_col}) out of range")
    return f"{stain}_{slide}_r{grid_row:03d}_c{grid_col:03d}.png"


def decode_tile_name(name: str) -> tuple[str, str, int, int]:
    m = _NAME_RE.match(name)
    if m is None:
        raise InvalidNameError(f"unparseable tile name {name!r}")
    return m.group(1), m.group(2), int(m.group(3)), int(m.group(4))


def _axis_starts(extent: int, size: int, stride: int) -> list[int]:
    starts: list[int] = []
    pos = 0
    while True:
        start = min(pos, extent - size)
        if not starts or start != starts[-1]:
            starts.append(start)
        if pos >= extent - size:
            break
        pos += stride
    return starts
