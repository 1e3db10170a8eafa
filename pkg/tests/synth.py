"""Synthetic fixtures: textures with known transforms and fake slide files."""
from __future__ import annotations

from pathlib import Path

import cv2
import numpy as np
import tifffile
from PIL import Image


def make_texture(size: int, rng: np.random.Generator,
                 lo: int = 40, hi: int = 250) -> np.ndarray:
    """Smooth random texture on a centered disk, zero background.

    The disk is inscribed with a margin so rotating about the center never
    clips content; smooth random noise has no rotational symmetry.
    """
    coarse = rng.random((max(4, size // 16), max(4, size // 16)))
    tex = cv2.resize(coarse, (size, size), interpolation=cv2.INTER_CUBIC)
    tex = (tex - tex.min()) / max(tex.max() - tex.min(), 1e-9)
    yy, xx = np.mgrid[:size, :size]
    c = (size - 1) / 2.0
    disk = ((yy - c) ** 2 + (xx - c) ** 2) <= (0.94 * c) ** 2
    img = (lo + tex * (hi - lo)) * disk
    return np.clip(img, 0, 255).astype(np.uint8)


def embed(content: np.ndarray, canvas_shape: tuple[int, int],
          offset: tuple[int, int]) -> np.ndarray:
    """Paste content onto a zero canvas with top-left at offset."""
    canvas = np.zeros(canvas_shape, dtype=np.uint8)
    r, c = offset
    canvas[r:r + content.shape[0], c:c + content.shape[1]] = content
    return canvas


def as_phi(image: np.ndarray, kind: str = "target"):
    from star.preprocess import PreprocessedImage

    return PreprocessedImage(image=image, kind=kind)


def make_tissue_image(rows: int, cols: int, rng: np.random.Generator,
                      center: tuple[float, float] | None = None,
                      axes: tuple[float, float] | None = None) -> np.ndarray:
    """White-background RGB slide with one textured tissue blob.

    The blob is a superellipse (rounded rectangle) so it fills classifier
    windows the way a real section fills its bounding region; intensities
    stay strictly inside the (20, 230) gates so the foreground stage sees it.
    """
    if center is None:
        center = (rows * 0.5, cols * 0.5)
    if axes is None:
        axes = (rows * 0.32, cols * 0.26)
    yy, xx = np.mgrid[:rows, :cols]
    inside = (np.abs((yy - center[0]) / axes[0]) ** 4
              + np.abs((xx - center[1]) / axes[1]) ** 4) <= 1.0
    # texture grain ~5 px at 32x so structure survives thumbnailing and blur
    coarse = rng.random((max(4, rows // 160), max(4, cols // 160), 3))
    tex = cv2.resize(coarse, (cols, rows), interpolation=cv2.INTER_CUBIC)
    tex = np.clip(tex, 0, 1)
    tissue = (40 + tex * 175).astype(np.uint8)
    img = np.full((rows, cols, 3), 255, dtype=np.uint8)
    img[inside] = tissue[inside]
    return img


def rotate_rgb(img: np.ndarray, theta_deg: float) -> np.ndarray:
    """Rotate an RGB canvas about its center, white fill (slide background)."""
    rows, cols = img.shape[:2]
    m = cv2.getRotationMatrix2D(((cols - 1) / 2.0, (rows - 1) / 2.0), theta_deg, 1.0)
    return cv2.warpAffine(img, m, (cols, rows), flags=cv2.INTER_LINEAR,
                          borderMode=cv2.BORDER_CONSTANT,
                          borderValue=(255, 255, 255))


def shift_rgb(img: np.ndarray, d_row: int, d_col: int) -> np.ndarray:
    """Integer translation on a white canvas."""
    out = np.full_like(img, 255)
    rows, cols = img.shape[:2]
    src_r = slice(max(0, -d_row), min(rows, rows - d_row))
    src_c = slice(max(0, -d_col), min(cols, cols - d_col))
    dst_r = slice(max(0, d_row), max(0, d_row) + (src_r.stop - src_r.start))
    dst_c = slice(max(0, d_col), max(0, d_col) + (src_c.stop - src_c.start))
    out[dst_r, dst_c] = img[src_r, src_c]
    return out


def write_png_slide(path: Path, img: np.ndarray) -> Path:
    Image.fromarray(img).save(path)
    return path


def write_flat_tiff_slide(path: Path, img: np.ndarray) -> Path:
    tifffile.imwrite(path, img, photometric="rgb")
    return path


def write_pyramidal_tiff_slide(path: Path, img: np.ndarray,
                               levels: int = 3) -> Path:
    """Tiled pyramid with 2x level steps (box-averaged reductions)."""
    with tifffile.TiffWriter(path) as writer:
        opts = dict(tile=(128, 128), photometric="rgb")
        writer.write(img, subifds=levels - 1, **opts)
        level = img
        for _ in range(levels - 1):
            rows = (level.shape[0] // 2) * 2
            cols = (level.shape[1] // 2) * 2
            even = level[:rows, :cols].astype(np.uint16)
            level = ((even[0::2, 0::2] + even[1::2, 0::2]
                      + even[0::2, 1::2] + even[1::2, 1::2] + 2) // 4).astype(np.uint8)
            writer.write(level, subfiletype=1, **opts)
    return path


def make_case_pair(tmp_path: Path, rng: np.random.Generator,
                   rows: int = 1536, cols: int = 2048,
                   theta_deg: float = 0.0, shift: tuple[int, int] = (0, 0),
                   fmt: str = "png") -> tuple[Path, Path]:
    """Reference slide plus a rigidly moved target slide of the same tissue."""
    ref = make_tissue_image(rows, cols, rng)
    tgt = shift_rgb(rotate_rgb(ref, theta_deg), *shift)
    writer = {"png": write_png_slide, "tiff": write_flat_tiff_slide,
              "pyramid": write_pyramidal_tiff_slide}[fmt]
    suffix = "png" if fmt == "png" else "tiff"
    ref_path = writer(tmp_path / f"reference.{suffix}", ref)
    tgt_path = writer(tmp_path / f"target.{suffix}", tgt)
    return ref_path, tgt_path
