"""Applying recovered transforms and persisting results.

The aligned view of a target is produced by sampling the target through the
forward rotation map of the recovered transform, which undoes the rotation
and translation in a single bilinear warp. Native-resolution exports read
only a circumradius-padded superset of the footprint (crop-and-embed), so a
gigapixel slide is never materialized whole.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace

import cv2
import numpy as np

from .errors import DimMismatchError, OutOfBoundsError, SchemaError
from .geometry import BBox
from .preprocess import PreprocessedImage
from .register import RigidResult
from .slide_io import SlideSource, read_region_native

SIDECAR_VERSION = 1
_SIDECAR_FIELDS = (
    "version", "reference_id", "target_id", "downsample", "theta_deg",
    "row", "col", "template_rows", "template_cols", "score", "qa",
    "refined", "grid_shift",
)


@dataclass
class Sidecar:
    """Persisted registration parameters and refinement state for one pair."""

    reference_id: str
    target_id: str
    downsample: int
    theta_deg: float
    row: int
    col: int
    template_rows: int
    template_cols: int
    score: float
    qa: float
    refined: bool = False
    grid_shift: tuple[int, int] = (0, 0)
    version: int = SIDECAR_VERSION

    def result(self) -> RigidResult:
        return RigidResult(row=self.row, col=self.col, theta_deg=self.theta_deg,
                           score=self.score, downsample=self.downsample)


@dataclass(frozen=True)
class OverlaySpec:
    """Divider grid drawn on aligned thumbnails."""

    grid_spacing: int
    line_value: int = 0

    def __post_init__(self):
        if self.grid_spacing < 2:
            raise ValueError("grid_spacing must be >= 2")


def _alignment_map(result: RigidResult, template_dims: tuple[int, int]) -> np.ndarray:
    """dst->src affine taking aligned-output pixels to target pixels.

    Sampling the target through the forward rotation about the footprint
    center inverts 'rotate template by theta, place top-left at (row, col)'
    exactly, for any placement.
    """
    k_h, k_w = template_dims
    center = ((k_w - 1) / 2.0, (k_h - 1) / 2.0)
    m = cv2.getRotationMatrix2D(center, result.theta_deg, 1.0)
    m[0, 2] += result.col
    m[1, 2] += result.row
    return m


def apply_rigid_thumbnail(target_thumb: np.ndarray, result: RigidResult,
                          template_dims: tuple[int, int]) -> np.ndarray:
    """Aligned template-sized crop of the target thumbnail.

    Out-of-canvas samples fill with 0 (black); output dims are always
    template_dims.
    """
    k_h, k_w = template_dims
    m = _alignment_map(result, template_dims)
    fill = 0 if target_thumb.ndim == 2 else (0, 0, 0)
    return cv2.warpAffine(target_thumb, m, (k_w, k_h),
                          flags=cv2.INTER_LINEAR | cv2.WARP_INVERSE_MAP,
                          borderMode=cv2.BORDER_CONSTANT, borderValue=fill)


def apply_rigid_native(slide: SlideSource, result: RigidResult,
                       template_dims: tuple[int, int]) -> np.ndarray:
    """Native-resolution aligned crop via crop-and-embed.

    The thumbnail-scale transform lifts by the downsample factor d: the
    native footprint center sits exactly d times finer than the thumbnail
    one, so this output downsampled by d matches apply_rigid_thumbnail up
    to interpolation differences.
    """
    d = result.downsample
    k_h, k_w = template_dims[0] * d, template_dims[1] * d
    row, col = result.row * d, result.col * d
    if result.theta_deg % 360 == 0:
        return _read_clamped(slide, row, col, k_h, k_w)
    center_r = row + (k_h - 1) / 2.0
    center_c = col + (k_w - 1) / 2.0
    radius = int(math.ceil(math.hypot(k_h, k_w) / 2.0)) + 2
    r0 = max(0, int(math.floor(center_r)) - radius)
    r1 = min(slide.height, int(math.ceil(center_r)) + radius)
    c0 = max(0, int(math.floor(center_c)) - radius)
    c1 = min(slide.width, int(math.ceil(center_c)) + radius)
    if r1 <= r0 or c1 <= c0:
        raise OutOfBoundsError("rotated footprint lies entirely outside the slide")
    region = read_region_native(slide, BBox(r0, c0, r1, c1))
    native = replace(result, row=row, col=col, downsample=1)
    m = _alignment_map(native, (k_h, k_w))
    m[0, 2] -= c0
    m[1, 2] -= r0
    return cv2.warpAffine(region, m, (k_w, k_h),
                          flags=cv2.INTER_LINEAR | cv2.WARP_INVERSE_MAP,
                          borderMode=cv2.BORDER_CONSTANT, borderValue=(0, 0, 0))


def render_divider_overlay(img: np.ndarray, spec: OverlaySpec) -> np.ndarray:
    """Copy of the image with 1-px grid lines at every grid_spacing multiple."""
    if img.ndim == 2:
        out = np.repeat(img[:, :, None], 3, axis=2)
    else:
        out = img.copy()
    value = np.uint8(spec.line_value)
    out[::spec.grid_spacing, :, :] = value
    out[:, ::spec.grid_spacing, :] = value
    return out


def qa_score(phi_r: PreprocessedImage, aligned_phi_t: np.ndarray) -> float:
    """Masked Pearson correlation between the reference and the aligned target.

    Computed over pixels where the dilated reference mask is 1; returns 0.0
    when either side is constant on that support.
    """
    if phi_r.image.shape != aligned_phi_t.shape:
        raise DimMismatchError(
            f"reference {phi_r.image.shape} vs aligned {aligned_phi_t.shape}")
    if phi_r.mask is not None:
        support = phi_r.mask.astype(bool)
        x = phi_r.image[support].astype(np.float64)
        y = aligned_phi_t[support].astype(np.float64)
    else:
        x = phi_r.image.astype(np.float64).ravel()
        y = aligned_phi_t.astype(np.float64).ravel()
    if x.size == 0:
        return 0.0
    xc = x - x.mean()
    yc = y - y.mean()
    norm = math.sqrt(float(np.dot(xc, xc)) * float(np.dot(yc, yc)))
    if norm == 0.0:
        return 0.0
    return float(np.clip(np.dot(xc, yc) / norm, -1.0, 1.0))


def scale_rigid(result: RigidResult, factor: int) -> RigidResult:
    """Express a result at a `factor` times finer scale (e.g. 32x -> 16x)."""
    if result.downsample % factor != 0:
        raise ValueError(f"downsample {result.downsample} not divisible by {factor}")
    return replace(result, row=result.row * factor, col=result.col * factor,
                   downsample=result.downsample // factor)


# -- sidecar persistence -----------------------------------------------------


def sidecar_to_dict(sidecar: Sidecar) -> dict:
    return {
        "version": sidecar.version,
        "reference_id": sidecar.reference_id,
        "target_id": sidecar.target_id,
        "downsample": sidecar.downsample,
        "theta_deg": sidecar.theta_deg,
        "row": sidecar.row,
        "col": sidecar.col,
        "template_rows": sidecar.template_rows,
        "template_cols": sidecar.template_cols,
        "score": sidecar.score,
        "qa": sidecar.qa,
        "refined": sidecar.refined,
        "grid_shift": list(sidecar.grid_shift),
    }


def sidecar_from_dict(data: dict) -> Sidecar:
    if not isinstance(data, dict):
        raise SchemaError("sidecar must be a JSON object")
    missing = set(_SIDECAR_FIELDS) - set(data)
    unknown = set(data) - set(_SIDECAR_FIELDS)
    if missing:
        raise SchemaError(f"missing fields: {sorted(missing)}")
    if unknown:
        raise SchemaError(f"unknown fields: {sorted(unknown)}")
    if data["version"] != SIDECAR_VERSION:
        raise SchemaError(f"unsupported version {data['version']!r}")
    try:
        theta = float(data["theta_deg"])
        shift = tuple(int(v) for v in data["grid_shift"])
        sidecar = Sidecar(
            reference_id=str(data["reference_id"]),
            target_id=str(data["target_id"]),
            downsample=int(data["downsample"]),
            theta_deg=theta,
            row=int(data["row"]),
            col=int(data["col"]),
            template_rows=int(data["template_rows"]),
            template_cols=int(data["template_cols"]),
            score=float(data["score"]),
            qa=float(data["qa"]),
            refined=bool(data["refined"]),
            grid_shift=shift,
        )
    except (TypeError, ValueError) as exc:
        raise SchemaError(f"malformed field: {exc}") from exc
    if not (0.0 <= sidecar.theta_deg < 360.0):
        raise SchemaError(f"theta_deg {sidecar.theta_deg} outside [0, 360)")
    if len(sidecar.grid_shift) != 2:
        raise SchemaError("grid_shift must have two components")
    if not sidecar.refined and sidecar.grid_shift != (0, 0):
        raise SchemaError("grid_shift must be (0, 0) unless refined")
    if not (-1.0 <= sidecar.qa <= 1.0):
        raise SchemaError(f"qa {sidecar.qa} outside [-1, 1]")
    return sidecar


def write_sidecar(sidecar: Sidecar, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(sidecar_to_dict(sidecar), fh, indent=2)
        fh.write("\n")


def read_sidecar(path) -> Sidecar:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"{path}: not valid JSON: {exc}") from exc
    return sidecar_from_dict(data)


def _read_clamped(slide: SlideSource, row: int, col: int,
                  rows: int, cols: int) -> np.ndarray:
    """Footprint read that fills out-of-slide areas with black."""
    r0, r1 = max(0, row), min(slide.height, row + rows)
    c0, c1 = max(0, col), min(slide.width, col + cols)
    if r1 <= r0 or c1 <= c0:
        raise OutOfBoundsError("footprint lies entirely outside the slide")
    if (r0, r1, c0, c1) == (row, row + rows, col, col + cols):
        return read_region_native(slide, BBox(row, col, row + rows, col + cols))
    out = np.zeros((rows, cols, 3), dtype=np.uint8)
    region = read_region_native(slide, BBox(r0, c0, r1, c1))
    out[r0 - row:r1 - row, c0 - col:c1 - col] = region
    return out
