"""Rigid alignment of serial slide images by rotational correlation search."""

from .geometry import BBox
from .foreground import (
    BlockMask,
    block_mask,
    classify_patches,
    default_classifier,
    dilate_mask,
    extract_roi,
    gate_mask,
)
from .preprocess import (
    PreprocessedImage,
    histogram_equalize,
    invert,
    preprocess_reference,
    preprocess_target,
    rescale_minmax,
    to_grayscale,
)
from .register import (
    CoarseResult,
    CorrelationMap,
    RigidResult,
    RotationBank,
    SearchConfig,
    adaptive_scale_kernel,
    build_rotation_bank,
    coarse_search,
    correlate,
    fine_search,
    register_pair,
    rotate_image,
)
from .compose import (
    OverlaySpec,
    Sidecar,
    apply_rigid_native,
    apply_rigid_thumbnail,
    qa_score,
    read_sidecar,
    render_divider_overlay,
    write_sidecar,
)
from .slide_io import (
    SlideSource,
    open_slide,
    read_region_native,
    read_thumbnail,
    write_image,
)
from .tiling import TileSpec, decode_tile_name, encode_tile_name, extract_tiles, plan_tiles
from .batch import RunConfig, RunReport, run_batch
from .service import GridShift, apply_grid_shift, create_app, serve

__version__ = "0.1.0"
