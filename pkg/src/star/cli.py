"""Command line entry points: `star register`, `star tile`, `star serve`."""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .batch import RunConfig, run_batch, _tile_label
from .errors import StarError

# flags that map 1:1 onto RunConfig fields
_CONFIG_FLAGS = (
    "downsample", "vis_downsample", "coarse_angle", "fine_angle",
    "coarse_stride", "fine_stride", "white", "black", "patch",
    "patch_stride", "tile_size", "tile_overlap", "qa_threshold", "workers",
)


class _Parser(argparse.ArgumentParser):
    """argparse with usage errors mapped to exit code 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(1)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="star", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    reg = sub.add_parser("register", help="align targets to a reference slide")
    reg.add_argument("--ref", required=True, help="reference slide path")
    reg.add_argument("--target", required=True, nargs="+", help="target slide paths")
    reg.add_argument("--out", required=True, help="output directory")
    reg.add_argument("--config", help="JSON config file mirroring RunConfig fields")
    reg.add_argument("--downsample", type=int)
    reg.add_argument("--vis-downsample", type=int, dest="vis_downsample")
    reg.add_argument("--coarse-angle", type=float, dest="coarse_angle")
    reg.add_argument("--fine-angle", type=float, dest="fine_angle")
    reg.add_argument("--coarse-stride", type=int, dest="coarse_stride")
    reg.add_argument("--fine-stride", type=int, dest="fine_stride")
    reg.add_argument("--white", type=int)
    reg.add_argument("--black", type=int)
    reg.add_argument("--tile-size", type=int, dest="tile_size")
    reg.add_argument("--tile-overlap", type=float, dest="tile_overlap")
    reg.add_argument("--tile", action="store_true", help="also export tiles")
    reg.add_argument("--workers", type=int)

    til = sub.add_parser("tile", help="re-tile an already registered case")
    til.add_argument("--case", required=True, help="case directory from a run")
    til.add_argument("--tile-size", type=int, dest="tile_size")
    til.add_argument("--tile-overlap", type=float, dest="tile_overlap")

    srv = sub.add_parser("serve", help="serve cases for interactive refinement")
    srv.add_argument("--cases", required=True, help="run output directory")
    srv.add_argument("--port", type=int, default=8417)
    srv.add_argument("--host", default="127.0.0.1")
    srv.add_argument("--ui", help="directory of built UI assets to serve at /")
    return parser


def _cmd_register(args) -> int:
    values: dict = {}
    if args.config:
        try:
            values.update(json.loads(Path(args.config).read_text()))
        except (OSError, json.JSONDecodeError) as exc:
            print(f"star: bad config file: {exc}", file=sys.stderr)
            return 1
    for flag in _CONFIG_FLAGS:
        cli_value = getattr(args, flag, None)
        if cli_value is not None:
            values[flag] = cli_value
    if args.tile:
        values["do_tiling"] = True
    values.pop("reference_path", None)
    values.pop("target_paths", None)
    values.pop("out_dir", None)
    try:
        config = RunConfig(reference_path=args.ref, target_paths=list(args.target),
                           out_dir=args.out, **values)
    except (TypeError, ValueError) as exc:
        print(f"star: bad configuration: {exc}", file=sys.stderr)
        return 1
    report = run_batch(config)
    for target in report.targets:
        line = f"{target.target_id}: {target.status}"
        if target.status != "failed":
            line += (f" (theta={target.theta_deg:.1f} deg, row={target.row},"
                     f" col={target.col}, qa={target.qa:.3f},"
                     f" {target.wall_time:.1f}s)")
        else:
            line += f" ({target.error})"
        print(line)
    counts = report.counts
    print(f"done: {counts['ok']} ok, {counts['low_qa']} low_qa,"
          f" {counts['failed']} failed in {report.wall_time:.1f}s")
    return 2 if counts["failed"] else 0


def _cmd_tile(args) -> int:
    from PIL import Image
    import tifffile

    from . import slide_io, tiling
    from .compose import read_sidecar
    from .foreground import BlockMask

    case_dir = Path(args.case)
    try:
        sidecar = read_sidecar(case_dir / "params.json")
        native = tifffile.imread(case_dir / "aligned_native.tiff")
        grid = (np.asarray(Image.open(case_dir / "mask_blocks.png")) > 0).astype(np.uint8)
    except (OSError, StarError) as exc:
        print(f"star: cannot load case: {exc}", file=sys.stderr)
        return 1
    tile_size = args.tile_size if args.tile_size else 256
    overlap = args.tile_overlap if args.tile_overlap is not None else 0.2
    blocks = BlockMask(block_size=tile_size // sidecar.downsample, grid=grid)
    plan = tiling.plan_tiles(native.shape[:2], tile_size, overlap)
    kept = tiling.extract_tiles(native, blocks, plan, block_px=tile_size)
    tiles_dir = case_dir / "tiles"
    tiles_dir.mkdir(exist_ok=True)
    manifest = []
    for spec, tile in kept:
        name = tiling.encode_tile_name(_tile_label(sidecar.target_id),
                                       _tile_label(sidecar.reference_id),
                                       spec.grid_row, spec.grid_col)
        slide_io.write_image(tiles_dir / name, tile)
        manifest.append({"name": name, "row0": spec.row0, "col0": spec.col0,
                         "size": spec.size, "grid_row": spec.grid_row,
                         "grid_col": spec.grid_col})
    (case_dir / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    print(f"wrote {len(kept)} tiles to {tiles_dir}")
    return 0


def _cmd_serve(args) -> int:
    from .service import serve

    cases_dir = Path(args.cases)
    if not cases_dir.is_dir():
        print(f"star: not a directory: {cases_dir}", file=sys.stderr)
        return 1
    serve(cases_dir, port=args.port, host=args.host, ui_dir=args.ui)
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "register":
            return _cmd_register(args)
        if args.command == "tile":
            return _cmd_tile(args)
        return _cmd_serve(args)
    except StarError as exc:
        print(f"star: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
