"""HTTP service for human-in-the-loop grid refinement of registered cases.

Serves case listings, thumbnails, and overlays from a batch output
directory. Shifts are integer multiples of one grid cell (one native tile),
applied at thumbnail scale for sub-second feedback; commit re-exports the
native crop from the refined parameters and is terminal for the case.
"""
from __future__ import annotations

import json
import threading
from collections import defaultdict
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from fastapi import FastAPI, HTTPException, Response
from pydantic import BaseModel, ConfigDict
from typing import Literal

from . import compose, slide_io
from .compose import OverlaySpec, Sidecar, read_sidecar, sidecar_to_dict, write_sidecar
from .errors import OutOfCanvasError

MAX_SHIFT = 100  # grid cells; sanity bound on one refinement step


@dataclass(frozen=True)
class GridShift:
    """Integer translation in grid units (one unit = one native tile)."""

    d_rows: int
    d_cols: int

    def __post_init__(self):
        if abs(self.d_rows) > MAX_SHIFT or abs(self.d_cols) > MAX_SHIFT:
            raise ValueError(f"shift {self} exceeds +-{MAX_SHIFT} cells")


@dataclass
class CaseRecord:
    case_id: str
    sidecar: Sidecar
    state: str  # clean | shifted | committed
    images: dict[str, Path]

    def to_dict(self) -> dict:
        return {
            "case_id": self.case_id,
            "state": self.state,
            "sidecar": sidecar_to_dict(self.sidecar),
            "images": {k: str(v.name) for k, v in self.images.items()},
        }


def apply_grid_shift(sidecar: Sidecar, shift: GridShift, grid_unit: int,
                     canvas_dims: tuple[int, int]) -> Sidecar:
    """Translate the placement by whole grid cells; rotation never changes.

    A zero shift returns the sidecar unchanged (the refined flag only flips
    on an actual move). Raises OutOfCanvasError if the shifted footprint no
    longer intersects the target thumbnail at all.
    """
    if shift.d_rows == 0 and shift.d_cols == 0:
        return replace(sidecar)
    row = sidecar.row + shift.d_rows * grid_unit
    col = sidecar.col + shift.d_cols * grid_unit
    if (row + sidecar.template_rows <= 0 or row >= canvas_dims[0]
            or col + sidecar.template_cols <= 0 or col >= canvas_dims[1]):
        raise OutOfCanvasError(
            f"footprint at ({row}, {col}) misses canvas {canvas_dims}")
    return replace(
        sidecar, row=row, col=col, refined=True,
        grid_shift=(sidecar.grid_shift[0] + shift.d_rows,
                    sidecar.grid_shift[1] + shift.d_cols))


class CaseStore:
    """Registered cases in a batch output directory.

    Sidecars are the source of truth on disk; per-case writer locks
    serialize mutations while other cases proceed concurrently.
    """

    LAYER_FILES = {"ref": "ref_thumb.png", "aligned": "aligned_thumb.png",
                   "overlay": "overlay.png"}

    def __init__(self, cases_dir):
        self.cases_dir = Path(cases_dir)
        self._guard = threading.Lock()
        self._locks: dict[str, threading.Lock] = defaultdict(threading.Lock)

    def lock(self, case_id: str) -> threading.Lock:
        with self._guard:
            return self._locks[case_id]

    def case_ids(self) -> list[str]:
        return sorted(
            p.name for p in self.cases_dir.iterdir()
            if p.is_dir() and (p / "params.json").exists()
        )

    def case_dir(self, case_id: str) -> Path:
        return self.cases_dir / case_id

    def load(self, case_id: str) -> CaseRecord | None:
        case_dir = self.case_dir(case_id)
        if "/" in case_id or "\\" in case_id or not (case_dir / "params.json").exists():
            return None
        sidecar = read_sidecar(case_dir / "params.json")
        if (case_dir / "committed.json").exists():
            state = "committed"
        elif sidecar.refined:
            state = "shifted"
        else:
            state = "clean"
        images = {k: case_dir / v for k, v in self.LAYER_FILES.items()}
        return CaseRecord(case_id=case_id, sidecar=sidecar, state=state,
                          images=images)

    def meta(self, case_id: str) -> dict:
        return json.loads((self.case_dir(case_id) / "case.json").read_text())

    def rerender(self, case_id: str, sidecar: Sidecar) -> None:
        """Regenerate aligned thumbnail + overlay from the stored target thumb.

        Pure function of the sidecar and the stored inputs, so undoing a
        shift restores the previous renders bit-for-bit.
        """
        from PIL import Image

        case_dir = self.case_dir(case_id)
        meta = self.meta(case_id)
        vis_factor = sidecar.downsample // meta["vis_downsample"]
        t_vis = np.asarray(Image.open(case_dir / "target_thumb.png"))
        vis_dims = (sidecar.template_rows * vis_factor,
                    sidecar.template_cols * vis_factor)
        aligned = compose.apply_rigid_thumbnail(
            t_vis, compose.scale_rigid(sidecar.result(), vis_factor), vis_dims)
        overlay = compose.render_divider_overlay(
            aligned,
            OverlaySpec(grid_spacing=meta["tile_size"] // meta["vis_downsample"]))
        slide_io.write_image(case_dir / "aligned_thumb.png", aligned)
        slide_io.write_image(case_dir / "overlay.png", overlay)


class ShiftBody(BaseModel):
    model_config = ConfigDict(extra="forbid", strict=True)
    d_rows: int
    d_cols: int


def create_app(cases_dir, ui_dir=None) -> FastAPI:
    store = CaseStore(cases_dir)
    app = FastAPI(title="star refinement service")

    def get_case_or_404(case_id: str) -> CaseRecord:
        record = store.load(case_id)
        if record is None:
            raise HTTPException(status_code=404, detail=f"unknown case {case_id!r}")
        return record

    @app.get("/cases")
    def list_cases() -> list[dict]:
        return [store.load(cid).to_dict() for cid in store.case_ids()]

    @app.get("/cases/{case_id}")
    def get_case(case_id: str) -> dict:
        return get_case_or_404(case_id).to_dict()

    @app.get("/cases/{case_id}/image")
    def get_image(case_id: str, layer: Literal["ref", "aligned", "overlay"]):
        record = get_case_or_404(case_id)
        path = record.images[layer]
        if not path.exists():
            raise HTTPException(status_code=404, detail=f"no {layer} image")
        return Response(content=path.read_bytes(), media_type="image/png")

    @app.post("/cases/{case_id}/shift")
    def post_shift(case_id: str, body: ShiftBody) -> dict:
        with store.lock(case_id):
            record = get_case_or_404(case_id)
            if record.state == "committed":
                raise HTTPException(status_code=409, detail="case already committed")
            try:
                shift = GridShift(body.d_rows, body.d_cols)
                meta = store.meta(case_id)
                grid_unit = meta["tile_size"] // record.sidecar.downsample
                canvas = (meta["target_reg_rows"], meta["target_reg_cols"])
                updated = apply_grid_shift(record.sidecar, shift, grid_unit, canvas)
            except (ValueError, OutOfCanvasError) as exc:
                raise HTTPException(status_code=422, detail=str(exc)) from exc
            write_sidecar(updated, store.case_dir(case_id) / "params.json")
            store.rerender(case_id, updated)
            return sidecar_to_dict(updated)

    @app.post("/cases/{case_id}/commit")
    def post_commit(case_id: str) -> dict:
        with store.lock(case_id):
            record = get_case_or_404(case_id)
            if record.state == "committed":
                raise HTTPException(status_code=409, detail="case already committed")
            meta = store.meta(case_id)
            slide = slide_io.open_slide(meta["target_path"])
            native = compose.apply_rigid_native(
                slide, record.sidecar.result(),
                (record.sidecar.template_rows, record.sidecar.template_cols))
            case_dir = store.case_dir(case_id)
            slide_io.write_tiled_tiff(case_dir / "aligned_native.tiff", native)
            (case_dir / "committed.json").write_text(
                json.dumps({"status": "committed"}) + "\n")
            return {"status": "committed"}

    if ui_dir is not None and Path(ui_dir).is_dir():
        from fastapi.staticfiles import StaticFiles

        app.mount("/", StaticFiles(directory=ui_dir, html=True), name="ui")

    return app


def serve(cases_dir, port: int, host: str = "127.0.0.1", ui_dir=None) -> None:
    """Run the refinement service until interrupted."""
    import uvicorn

    app = create_app(cases_dir, ui_dir=ui_dir)
    uvicorn.run(app, host=host, port=port)
