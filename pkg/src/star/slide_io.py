"""Slide access: open flat/pyramidal rasters, read thumbnails and native regions.

Supported containers are PNG, flat TIFF, and pyramidal TIFF (reduced-resolution
subfiles). Vendor scanner formats are out of scope. Pixel data is never loaded
at open time; TIFF region reads decode only the tiles/strips that intersect the
request, so gigapixel level-0 planes are never materialized whole.
"""
from __future__ import annotations

import math
import threading
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import tifffile
from PIL import Image, UnidentifiedImageError

from .errors import DecodeError, OutOfBoundsError, UnsupportedFormatError
from .geometry import BBox

Image.MAX_IMAGE_PIXELS = None  # slides legitimately exceed PIL's decompression-bomb limit


@dataclass
class SlideSource:
    """Open slide handle: metadata plus a lazily-read pixel backend.

    Immutable after open; concurrent region reads are serialized on an
    internal lock because TIFF file handles share a seek position.
    """

    path: Path
    width: int
    height: int
    levels: int
    level_downsamples: list[int]
    _kind: str = "png"  # "png" | "tiff"
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)
    _png_cache: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise UnsupportedFormatError(f"{self.path}: empty raster")
        if self.level_downsamples[0] != 1:
            raise UnsupportedFormatError(f"{self.path}: base level is not full resolution")
        if any(b <= a for a, b in zip(self.level_downsamples, self.level_downsamples[1:])):
            raise UnsupportedFormatError(f"{self.path}: pyramid downsamples not increasing")


def open_slide(path) -> SlideSource:
    """Open a PNG or (pyramidal) TIFF and return its metadata handle.

    No pixel data is decoded here. Raises FileNotFoundError for missing
    paths and UnsupportedFormatError for anything that is not a readable
    8-bit 1- or 3-channel raster.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(str(path))
    suffix = path.suffix.lower()
    if suffix == ".png":
        try:
            with Image.open(path) as im:
                width, height = im.size
                if im.mode not in ("L", "RGB", "RGBA"):
                    raise UnsupportedFormatError(f"{path}: unsupported PNG mode {im.mode}")
        except UnidentifiedImageError as exc:
            raise UnsupportedFormatError(f"{path}: not a readable PNG") from exc
        return SlideSource(path, width, height, 1, [1], _kind="png")
    if suffix in (".tif", ".tiff"):
        try:
            with tifffile.TiffFile(path) as tif:
                series = tif.series[0]
                levels = series.levels
                base = levels[0]
                height, width = base.shape[0], base.shape[1]
                downs = [int(round(width / lvl.shape[1])) for lvl in levels]
        except (tifffile.TiffFileError, IndexError, ValueError) as exc:
            raise UnsupportedFormatError(f"{path}: not a readable TIFF") from exc
        return SlideSource(path, width, height, len(downs), downs, _kind="tiff")
    raise UnsupportedFormatError(f"{path}: unknown container {suffix!r}")


def read_thumbnail(slide: SlideSource, factor: int) -> np.ndarray:
    """Downsampled RGB view of the whole slide.

    Output dims are (ceil(H/factor), ceil(W/factor)): border tissue is never
    dropped. Pixels come from the nearest pyramid level whose downsample is
    <= factor, then exact box/area averaging brings them to size.
    """
    if factor < 1:
        raise ValueError("factor must be >= 1")
    out_rows = -(-slide.height // factor)
    out_cols = -(-slide.width // factor)
    level = _nearest_level(slide, factor)
    data = _read_level(slide, level)
    if factor == 1 and slide.level_downsamples[level] == 1:
        return data
    # level box edges in level-pixel units for each native-unit output box
    scale = slide.level_downsamples[level]
    row_edges = np.minimum(np.arange(out_rows + 1) * (factor / scale), data.shape[0])
    col_edges = np.minimum(np.arange(out_cols + 1) * (factor / scale), data.shape[1])
    return _area_average(data, row_edges, col_edges)


def read_region_native(slide: SlideSource, bbox: BBox) -> np.ndarray:
    """Exact native-resolution RGB crop of `bbox`.

    Out-of-bounds requests raise OutOfBoundsError rather than clamping:
    a silently shifted crop would corrupt downstream geometry.
    """
    if bbox.row0 < 0 or bbox.col0 < 0 or bbox.row1 > slide.height or bbox.col1 > slide.width:
        raise OutOfBoundsError(
            f"region {bbox} outside slide {slide.height}x{slide.width}"
        )
    if slide._kind == "png":
        data = _read_level(slide, 0)
        return data[bbox.row0:bbox.row1, bbox.col0:bbox.col1].copy()
    return _read_tiff_region(slide, bbox)


def write_image(path, image: np.ndarray) -> None:
    """Write a gray (HxW) or RGB (HxWx3) uint8 array as lossless PNG."""
    arr = np.ascontiguousarray(image)
    if arr.dtype != np.uint8:
        raise ValueError("write_image expects uint8 data")
    Image.fromarray(arr).save(path, format="PNG")


def write_tiled_tiff(path, image: np.ndarray, tile: int = 256) -> None:
    """Write an RGB or gray array as a tile-organized TIFF."""
    arr = np.ascontiguousarray(image)
    photometric = "rgb" if arr.ndim == 3 else "minisblack"
    tifffile.imwrite(path, arr, tile=(tile, tile), photometric=photometric)


def content_hash(image: np.ndarray) -> str:
    """Stable hex digest of pixel content, used as a cache key."""
    import hashlib

    h = hashlib.sha256()
    h.update(str(image.shape).encode())
    h.update(np.ascontiguousarray(image).tobytes())
    return h.hexdigest()


# -- internals ---------------------------------------------------------------


def _nearest_level(slide: SlideSource, factor: int) -> int:
    level = 0
    for i, ds in enumerate(slide.level_downsamples):
        if ds <= factor:
            level = i
    return level


def _to_rgb(arr: np.ndarray) -> np.ndarray:
    if arr.ndim == 2:
        return np.repeat(arr[:, :, None], 3, axis=2)
    if arr.shape[2] == 4:
        return np.ascontiguousarray(arr[:, :, :3])
    if arr.shape[2] == 3:
        return arr
    raise DecodeError(f"unsupported channel count {arr.shape[2]}")


def _read_level(slide: SlideSource, level: int) -> np.ndarray:
    """Decode one full pyramid level as RGB uint8."""
    with slide._lock:
        if slide._kind == "png":
            if slide._png_cache is None:
                try:
                    with Image.open(slide.path) as im:
                        arr = np.asarray(im.convert("RGB") if im.mode != "RGB" else im)
                except (OSError, SyntaxError) as exc:
                    raise DecodeError(f"{slide.path}: {exc}") from exc
                slide._png_cache = arr
            return slide._png_cache
        try:
            with tifffile.TiffFile(slide.path) as tif:
                arr = tif.series[0].levels[level].asarray()
        except (tifffile.TiffFileError, ValueError) as exc:
            raise DecodeError(f"{slide.path}: {exc}") from exc
    if arr.dtype != np.uint8:
        raise DecodeError(f"{slide.path}: expected 8-bit samples, got {arr.dtype}")
    return _to_rgb(arr)


def _read_tiff_region(slide: SlideSource, bbox: BBox) -> np.ndarray:
    """Decode only the level-0 tiles/strips intersecting bbox."""
    rows = bbox.row1 - bbox.row0
    cols = bbox.col1 - bbox.col0
    with slide._lock:
        with tifffile.TiffFile(slide.path) as tif:
            page = tif.series[0].levels[0].pages[0]
            if page.dtype != np.uint8:
                raise DecodeError(f"{slide.path}: expected 8-bit samples")
            samples = page.samplesperpixel
            out = np.zeros((rows, cols, samples), dtype=np.uint8)
            fh = tif.filehandle
            if page.is_tiled:
                seg_h, seg_w = page.tilelength, page.tilewidth
                across = math.ceil(page.imagewidth / seg_w)
                r_lo, r_hi = bbox.row0 // seg_h, (bbox.row1 - 1) // seg_h
                c_lo, c_hi = bbox.col0 // seg_w, (bbox.col1 - 1) // seg_w
                indices = [
                    r * across + c
                    for r in range(r_lo, r_hi + 1)
                    for c in range(c_lo, c_hi + 1)
                ]
            else:
                seg_h, seg_w = page.rowsperstrip, page.imagewidth
                r_lo, r_hi = bbox.row0 // seg_h, (bbox.row1 - 1) // seg_h
                indices = list(range(r_lo, r_hi + 1))
            for idx in indices:
                fh.seek(page.dataoffsets[idx])
                raw = fh.read(page.databytecounts[idx])
                try:
                    segment, position, _shape = page.decode(raw, idx)
                except (ValueError, RuntimeError) as exc:
                    raise DecodeError(f"{slide.path}: segment {idx}: {exc}") from exc
                seg_r, seg_c = position[2], position[3]
                seg = segment[0]  # (h, w, samples)
                # clip the segment to both the page extent and the request
                pr0 = max(seg_r, bbox.row0)
                pr1 = min(seg_r + seg.shape[0], min(bbox.row1, page.imagelength))
                pc0 = max(seg_c, bbox.col0)
                pc1 = min(seg_c + seg.shape[1], min(bbox.col1, page.imagewidth))
                if pr1 <= pr0 or pc1 <= pc0:
                    continue
                out[pr0 - bbox.row0:pr1 - bbox.row0, pc0 - bbox.col0:pc1 - bbox.col0] = (
                    seg[pr0 - seg_r:pr1 - seg_r, pc0 - seg_c:pc1 - seg_c]
                )
    return _to_rgb(out if samples > 1 else out[:, :, 0])


def _area_average(data: np.ndarray, row_edges: np.ndarray, col_edges: np.ndarray) -> np.ndarray:
    """Exact box average over fractional pixel boxes, via integral images.

    Each output pixel is the mean of data over the rectangle
    [row_edges[i], row_edges[i+1]) x [col_edges[j], col_edges[j+1]),
    with partial source pixels weighted by covered area.
    """
    if data.ndim == 2:
        data = data[:, :, None]
    acc = np.zeros((data.shape[0] + 1, data.shape[1] + 1, data.shape[2]), dtype=np.float64)
    np.cumsum(np.cumsum(data, axis=0), axis=1, out=acc[1:, 1:])

    def interp_rows(edges):
        lo = np.floor(edges).astype(int)
        frac = edges - lo
        return lo, frac

    def sample(axis_acc, edges):
        # linear interpolation of the cumulative sum at fractional edges
        lo, frac = interp_rows(edges)
        hi = np.minimum(lo + 1, axis_acc.shape[0] - 1)
        return axis_acc[lo] * (1 - frac)[:, None, None] + axis_acc[hi] * frac[:, None, None]

    rows_acc = sample(acc, row_edges)  # (R+1, W+1, C)
    rows_acc = np.swapaxes(rows_acc, 0, 1)  # (W+1, R+1, C)
    both = sample(rows_acc, col_edges)  # (Q+1, R+1, C)
    both = np.swapaxes(both, 0, 1)  # (R+1, Q+1, C)
    sums = both[1:, 1:] - both[:-1, 1:] - both[1:, :-1] + both[:-1, :-1]
    areas = np.outer(np.diff(row_edges), np.diff(col_edges))[:, :, None]
    out = np.floor(sums / areas + 0.5)
    out = np.clip(out, 0, 255).astype(np.uint8)
    return out if out.shape[2] > 1 else out[:, :, 0]
