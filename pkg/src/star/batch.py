"""Reference-to-multi-target batch runs.

The reference is analyzed once (foreground, ROI, preprocessing, rotation
bank); each target then registers, exports, and optionally tiles
independently. Per-target failures are isolated into the run report and
never abort the batch. The reference foreground mask and ROI are cached on
disk keyed by thumbnail content hash, so re-runs skip that stage and still
produce bit-identical outputs.
"""
from __future__ import annotations

import json
import time
import traceback
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import compose, foreground, preprocess, register, slide_io, tiling
from .foreground import BlockMask
from .geometry import BBox
from .preprocess import PreprocessedImage
from .register import RotationBank


@dataclass
class RunConfig:
    """All knobs of one batch run, with production defaults."""

    reference_path: str
    target_paths: list[str]
    out_dir: str
    downsample: int = 32
    vis_downsample: int = 16
    coarse_angle: float = 10.0
    fine_angle: float = 1.0
    coarse_stride: int = 10
    fine_stride: int = 1
    white: int = 230
    black: int = 20
    patch: int = 256
    patch_stride: int = 64
    tile_size: int = 256
    tile_overlap: float = 0.2
    qa_threshold: float = 0.2
    do_tiling: bool = False
    workers: int = 1

    def __post_init__(self):
        if abs(360.0 / self.coarse_angle - round(360.0 / self.coarse_angle)) > 1e-9:
            raise ValueError(f"coarse_angle {self.coarse_angle} must divide 360")
        if self.coarse_stride < 1 or self.fine_stride < 1:
            raise ValueError("strides must be >= 1")
        if not 0 <= self.tile_overlap < 1:
            raise ValueError("tile_overlap must be in [0, 1)")
        if self.downsample % self.vis_downsample != 0:
            raise ValueError("downsample must be a multiple of vis_downsample")
        if self.tile_size % self.downsample != 0:
            raise ValueError("tile_size must be a multiple of downsample")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")


@dataclass
class TargetReport:
    target_id: str
    status: str  # ok | low_qa | failed
    wall_time: float
    row: int | None = None
    col: int | None = None
    theta_deg: float | None = None
    score: float | None = None
    qa: float | None = None
    error: str | None = None

    def to_dict(self) -> dict:
        return {
            "target_id": self.target_id,
            "status": self.status,
            "wall_time": self.wall_time,
            "row": self.row,
            "col": self.col,
            "theta_deg": self.theta_deg,
            "score": self.score,
            "qa": self.qa,
            "error": self.error,
        }


@dataclass
class RunReport:
    targets: list[TargetReport]
    foreground_cached: bool
    wall_time: float

    @property
    def counts(self) -> dict:
        out = {"ok": 0, "low_qa": 0, "failed": 0}
        for t in self.targets:
            out[t.status] += 1
        return out

    def to_dict(self) -> dict:
        return {
            "targets": [t.to_dict() for t in self.targets],
            "totals": self.counts,
            "foreground_cached": self.foreground_cached,
            "wall_time": self.wall_time,
        }


@dataclass
class _SharedState:
    """Per-run immutable state shared by all target workers."""

    config: RunConfig
    reference_id: str
    phi_r: PreprocessedImage
    bank: RotationBank
    blocks: BlockMask
    roi: BBox
    ref_vis_crop: np.ndarray
    ref_slide: slide_io.SlideSource = None
    target_reg_dims: dict = field(default_factory=dict)


def run_batch(config: RunConfig,
              classifier: foreground.PatchClassifier = foreground.default_classifier
              ) -> RunReport:
    """Execute the full pipeline for every target; never raises per-target."""
    t_start = time.perf_counter()
    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    shared, cached = _prepare_reference(config, classifier)
    target_ids = _unique_ids(config.target_paths)

    reports: list[TargetReport] = [None] * len(config.target_paths)

    def worker(idx: int) -> None:
        path = config.target_paths[idx]
        tid = target_ids[idx]
        t0 = time.perf_counter()
        try:
            reports[idx] = _process_target(shared, path, tid)
        except Exception as exc:  # isolation: one bad target never kills the batch
            reports[idx] = TargetReport(
                target_id=tid, status="failed",
                wall_time=time.perf_counter() - t0,
                error=f"{type(exc).__name__}: {exc}",
            )
            traceback.print_exc()

    if config.workers > 1:
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            list(pool.map(worker, range(len(config.target_paths))))
    else:
        for idx in range(len(config.target_paths)):
            worker(idx)

    if config.do_tiling:
        _export_reference_tiles(shared, out_dir)

    report = RunReport(targets=reports, foreground_cached=cached,
                       wall_time=time.perf_counter() - t_start)
    with open(out_dir / "report.json", "w", encoding="utf-8") as fh:
        json.dump(report.to_dict(), fh, indent=2)
        fh.write("\n")
    return report


def _prepare_reference(config: RunConfig,
                       classifier: foreground.PatchClassifier
                       ) -> tuple[_SharedState, bool]:
    out_dir = Path(config.out_dir)
    ref_slide = slide_io.open_slide(config.reference_path)
    ref_thumb = slide_io.read_thumbnail(ref_slide, config.downsample)
    digest = slide_io.content_hash(ref_thumb)

    cache_dir = out_dir / "cache"
    cached = foreground.load_mask_cache(cache_dir, digest)
    if cached is not None:
        mask, roi = cached
        was_cached = True
    else:
        gate = foreground.gate_mask(ref_thumb, config.white, config.black)
        mask = foreground.classify_patches(ref_thumb, gate, classifier,
                                           config.patch, config.patch_stride)
        roi = foreground.extract_roi(mask)
        foreground.save_mask_cache(cache_dir, mask, roi, digest)
        was_cached = False

    dilated = foreground.dilate_mask(mask)
    crop = ref_thumb[roi.slices]
    phi_r = preprocess.preprocess_reference(crop, dilated[roi.slices],
                                            origin_bbox=roi)
    bank = register.build_rotation_bank(phi_r, step=config.coarse_angle)
    blocks = foreground.block_mask(mask[roi.slices],
                                   config.tile_size // config.downsample)

    vis_factor = config.downsample // config.vis_downsample
    ref_vis = slide_io.read_thumbnail(ref_slide, config.vis_downsample)
    ref_vis_crop = _crop_padded(ref_vis, roi.scaled(vis_factor))

    shared = _SharedState(
        config=config,
        reference_id=Path(config.reference_path).stem,
        phi_r=phi_r, bank=bank, blocks=blocks, roi=roi,
        ref_vis_crop=ref_vis_crop, ref_slide=ref_slide,
    )
    return shared, was_cached


def _process_target(shared: _SharedState, path: str, target_id: str) -> TargetReport:
    cfg = shared.config
    t0 = time.perf_counter()
    case_dir = Path(cfg.out_dir) / target_id
    case_dir.mkdir(parents=True, exist_ok=True)

    t_slide = slide_io.open_slide(path)
    t_thumb = slide_io.read_thumbnail(t_slide, cfg.downsample)
    phi_t = preprocess.preprocess_target(t_thumb)

    coarse = register.coarse_search(phi_t, shared.bank, stride=cfg.coarse_stride)
    result = register.fine_search(
        phi_t, shared.phi_r, coarse,
        fine_step=cfg.fine_angle, fine_stride=cfg.fine_stride,
        half_range=cfg.coarse_angle, downsample=cfg.downsample)

    template_dims = shared.phi_r.image.shape
    aligned_phi = compose.apply_rigid_thumbnail(phi_t.image, result, template_dims)
    qa = compose.qa_score(shared.phi_r, aligned_phi)

    # visualization exports run at the coarser vis factor; the sidecar
    # records the registration downsample so the scales never mix
    vis_factor = cfg.downsample // cfg.vis_downsample
    vis_dims = (template_dims[0] * vis_factor, template_dims[1] * vis_factor)
    result_vis = compose.scale_rigid(result, vis_factor)
    t_vis = slide_io.read_thumbnail(t_slide, cfg.vis_downsample)
    aligned_vis = compose.apply_rigid_thumbnail(t_vis, result_vis, vis_dims)
    overlay = compose.render_divider_overlay(
        aligned_vis,
        compose.OverlaySpec(grid_spacing=cfg.tile_size // cfg.vis_downsample))

    slide_io.write_image(case_dir / "aligned_thumb.png", aligned_vis)
    slide_io.write_image(case_dir / "overlay.png", overlay)
    slide_io.write_image(case_dir / "ref_thumb.png", shared.ref_vis_crop)
    slide_io.write_image(case_dir / "target_thumb.png", t_vis)
    slide_io.write_image(case_dir / "mask_blocks.png",
                         shared.blocks.grid * np.uint8(255))

    native = compose.apply_rigid_native(t_slide, result, template_dims)
    slide_io.write_tiled_tiff(case_dir / "aligned_native.tiff", native)

    sidecar = compose.Sidecar(
        reference_id=shared.reference_id, target_id=target_id,
        downsample=cfg.downsample, theta_deg=result.theta_deg,
        row=result.row, col=result.col,
        template_rows=template_dims[0], template_cols=template_dims[1],
        score=result.score, qa=qa)
    compose.write_sidecar(sidecar, case_dir / "params.json")

    case_meta = {
        "reference_path": str(Path(cfg.reference_path).resolve()),
        "target_path": str(Path(path).resolve()),
        "vis_downsample": cfg.vis_downsample,
        "tile_size": cfg.tile_size,
        "target_reg_rows": int(phi_t.image.shape[0]),
        "target_reg_cols": int(phi_t.image.shape[1]),
    }
    with open(case_dir / "case.json", "w", encoding="utf-8") as fh:
        json.dump(case_meta, fh, indent=2)
        fh.write("\n")

    if cfg.do_tiling:
        _export_tiles(shared, case_dir, native,
                      stain=_tile_label(target_id),
                      slide=_tile_label(shared.reference_id))

    status = "ok" if qa >= cfg.qa_threshold else "low_qa"
    return TargetReport(
        target_id=target_id, status=status,
        wall_time=time.perf_counter() - t0,
        row=result.row, col=result.col, theta_deg=result.theta_deg,
        score=result.score, qa=qa)


def _export_tiles(shared: _SharedState, case_dir: Path, native: np.ndarray,
                  stain: str, slide: str) -> None:
    cfg = shared.config
    plan = tiling.plan_tiles(native.shape[:2], cfg.tile_size, cfg.tile_overlap)
    kept = tiling.extract_tiles(native, shared.blocks, plan,
                                block_px=shared.blocks.block_size * cfg.downsample)
    tiles_dir = case_dir / "tiles"
    tiles_dir.mkdir(exist_ok=True)
    manifest = []
    for spec, tile in kept:
        name = tiling.encode_tile_name(stain, slide, spec.grid_row, spec.grid_col)
        slide_io.write_image(tiles_dir / name, tile)
        manifest.append({"name": name, "row0": spec.row0, "col0": spec.col0,
                         "size": spec.size, "grid_row": spec.grid_row,
                         "grid_col": spec.grid_col})
    with open(case_dir / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")


def _export_reference_tiles(shared: _SharedState, out_dir: Path) -> None:
    """Reference tiles share the targets' plan, keeping grid indices paired."""
    cfg = shared.config
    d = cfg.downsample
    native_roi = shared.roi.scaled(d)
    rows = min(native_roi.row1, shared.ref_slide.height) - native_roi.row0
    cols = min(native_roi.col1, shared.ref_slide.width) - native_roi.col0
    crop = slide_io.read_region_native(
        shared.ref_slide,
        BBox(native_roi.row0, native_roi.col0,
             native_roi.row0 + rows, native_roi.col0 + cols))
    full = np.zeros((shared.roi.rows * d, shared.roi.cols * d, 3), dtype=np.uint8)
    full[:rows, :cols] = crop
    case_dir = out_dir / "reference"
    case_dir.mkdir(exist_ok=True)
    slide_io.write_tiled_tiff(case_dir / "aligned_native.tiff", full)
    _export_tiles(shared, case_dir, full,
                  stain=_tile_label(shared.reference_id),
                  slide=_tile_label(shared.reference_id))


def _unique_ids(paths: list[str]) -> list[str]:
    seen: dict[str, int] = {}
    ids = []
    for p in paths:
        stem = Path(p).stem or "target"
        if stem == "reference":
            stem = "target-reference"
        count = seen.get(stem, 0)
        seen[stem] = count + 1
        ids.append(stem if count == 0 else f"{stem}-{count + 1}")
    return ids


def _tile_label(label: str) -> str:
    """Make a stem safe for tile filenames (underscores are separators)."""
    safe = label.replace("_", "-").replace("/", "-").replace("\\", "-")
    return safe or "x"


def _crop_padded(img: np.ndarray, bbox: BBox) -> np.ndarray:
    """Crop that zero-fills where bbox exceeds the image."""
    shape = (bbox.rows, bbox.cols) + img.shape[2:]
    out = np.zeros(shape, dtype=img.dtype)
    r1 = min(bbox.row1, img.shape[0])
    c1 = min(bbox.col1, img.shape[1])
    if r1 > bbox.row0 and c1 > bbox.col0:
        out[:r1 - bbox.row0, :c1 - bbox.col0] = img[bbox.row0:r1, bbox.col0:c1]
    return out
