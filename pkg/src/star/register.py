"""Rigid transform recovery by coarse-to-fine rotational correlation search.

A bank of rotated reference templates is slid over the preprocessed target;
the best raw correlation over (angle, row, col) wins. The coarse stage scans
the full circle at wide angular/translation strides, the fine stage refines
within one coarse angular step around the winner on a padded crop.

Raw (unnormalized) correlation sums are intentional: the preprocessing stage
(inversion + background zeroing) is what makes them meaningful. Scores are
exact integer-valued sums; a spectral path is used for large problems and
the winning placement is always re-scored by direct summation, so reported
scores are reproducible bit-for-bit.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import cv2
import numpy as np
import scipy.fft as sfft
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DegenerateKernelError, InvalidStepError, KernelTooLargeError
from .preprocess import PreprocessedImage

# above this many multiply-adds per map the spectral path takes over
DIRECT_WORK_LIMIT = 2 ** 25
# blocked direct evaluation bounds transient window copies to ~128 MB
DIRECT_BLOCK_ELEMS = 2 ** 24


@dataclass
class RotationBank:
    """Rotated copies of one template, all sharing its dimensions."""

    angles_deg: list[float]
    templates: list[np.ndarray]

    def __len__(self) -> int:
        return len(self.angles_deg)


@dataclass
class CorrelationMap:
    """Sliding correlation sums at a fixed stride.

    origin is the target-coordinate offset of scores[0, 0]; placements are
    origin + stride * index.
    """

    stride: int
    scores: np.ndarray
    origin: tuple[int, int] = (0, 0)


@dataclass
class CoarseResult:
    row_c: int
    col_c: int
    theta_c_deg: float
    score: float


@dataclass
class RigidResult:
    """Recovered rigid transform: template top-left placement + rotation.

    Coordinates are in preprocessed-target pixels at `downsample` times
    native resolution. theta_deg is normalized to [0, 360).
    """

    row: int
    col: int
    theta_deg: float
    score: float
    downsample: int = 1


@dataclass(frozen=True)
class SearchConfig:
    coarse_angle_deg: float = 10.0
    coarse_stride: int = 10
    fine_angle_deg: float = 1.0
    fine_stride: int = 1
    slack: int = 50


def rotate_image(img: np.ndarray, theta_deg: float) -> np.ndarray:
    """Rotate counterclockwise about the image center ((n-1)/2 convention).

    Bilinear sampling, output keeps the input dims, uncovered corners fill
    with 0. Zero fill is harmless downstream because templates have zeroed
    backgrounds.
    """
    if theta_deg % 360 == 0:
        return img.copy()
    rows, cols = img.shape[:2]
    center = ((cols - 1) / 2.0, (rows - 1) / 2.0)
    m = cv2.getRotationMatrix2D(center, theta_deg, 1.0)
    return cv2.warpAffine(img, m, (cols, rows), flags=cv2.INTER_LINEAR,
                          borderMode=cv2.BORDER_CONSTANT, borderValue=0)


def build_rotation_bank(phi_r: PreprocessedImage, start: float = 0.0,
                        stop: float = 360.0, step: float = 10.0) -> RotationBank:
    """Templates at {start, start+step, ..., stop-step}; step must divide 360."""
    if step <= 0 or abs(360.0 / step - round(360.0 / step)) > 1e-9:
        raise InvalidStepError(f"step {step} does not divide 360")
    count = int(round((stop - start) / step))
    angles = [start + i * step for i in range(count)]
    templates = [rotate_image(phi_r.image, a) for a in angles]
    return RotationBank(angles_deg=angles, templates=templates)


def adaptive_scale_kernel(kernel: np.ndarray, input_dims: tuple[int, int]) -> np.ndarray:
    """Shrink an oversize kernel so valid correlation stays defined.

    A kernel that already fits is returned unchanged. Otherwise both axes
    shrink by s = min((i_h-1)/k_h, (i_w-1)/k_w) under bilinear resampling.
    New dims are computed in integer arithmetic so they are exact.
    """
    k_h, k_w = kernel.shape
    i_h, i_w = input_dims
    if k_h <= i_h and k_w <= i_w:
        return kernel
    # pick the binding axis by cross-multiplication, avoiding float ratios
    if (i_h - 1) * k_w <= (i_w - 1) * k_h:  # s_h <= s_w
        new_h = i_h - 1
        new_w = (k_w * (i_h - 1)) // k_h
    else:
        new_h = (k_h * (i_w - 1)) // k_w
        new_w = i_w - 1
    if new_h < 1 or new_w < 1:
        raise DegenerateKernelError(
            f"kernel {kernel.shape} cannot shrink into {input_dims}")
    return cv2.resize(kernel, (new_w, new_h), interpolation=cv2.INTER_LINEAR)


def scaled_template_dims(template_dims: tuple[int, int],
                         target_dims: tuple[int, int]) -> tuple[int, int]:
    """Footprint dims a template will have after adaptive scaling."""
    probe = np.zeros(template_dims, dtype=np.uint8)
    k_h, k_w = template_dims
    i_h, i_w = target_dims
    if k_h <= i_h and k_w <= i_w:
        return template_dims
    return adaptive_scale_kernel(probe, target_dims).shape


def correlate(target: np.ndarray, kernel: np.ndarray, stride: int = 1,
              method: str = "auto") -> CorrelationMap:
    """Valid-mode sliding cross-correlation of raw intensities.

    scores[p, q] = sum over (u, v) of target[p*stride+u, q*stride+v] * kernel[u, v].

    method "direct" accumulates exact float64 sums (integer-exact for 8-bit
    inputs at supported sizes); "fft" is the spectral equivalent, within 1e-3
    absolute of direct; "auto" picks by work size.
    """
    if stride < 1:
        raise ValueError("stride must be >= 1")
    t_h, t_w = target.shape
    k_h, k_w = kernel.shape
    if k_h > t_h or k_w > t_w:
        raise KernelTooLargeError(
            f"kernel {kernel.shape} exceeds target {target.shape}")
    out_h = (t_h - k_h) // stride + 1
    out_w = (t_w - k_w) // stride + 1
    if method == "auto":
        work = out_h * out_w * k_h * k_w
        method = "direct" if work <= DIRECT_WORK_LIMIT else "fft"
    if method == "direct":
        scores = _direct_scores(target, kernel, stride, out_h, out_w)
    elif method == "fft":
        scores = _fft_scores(target.astype(np.float64), kernel, stride,
                             _target_fft(target.astype(np.float64)))
    else:
        raise ValueError(f"unknown method {method!r}")
    return CorrelationMap(stride=stride, scores=scores)


def score_at(target: np.ndarray, kernel: np.ndarray, row: int, col: int) -> float:
    """Exact correlation sum of one placement (direct summation)."""
    k_h, k_w = kernel.shape
    window = target[row:row + k_h, col:col + k_w].astype(np.float64)
    return float(np.sum(window * kernel.astype(np.float64)))


def coarse_search(phi_t: PreprocessedImage, bank: RotationBank,
                  stride: int = 10) -> CoarseResult:
    """Global argmax of correlation over all bank angles and placements.

    Oversize templates are adaptively scaled first. Ties break toward the
    smaller angle index, then smaller row, then smaller column; the reduction
    runs in angle order so results are deterministic.
    """
    if len(bank) == 0:
        raise ValueError("empty rotation bank")
    target = phi_t.image
    corr = _TargetCorrelator(target)
    best_score = -np.inf
    best = (0, 0, bank.angles_deg[0], None)
    for angle, template in zip(bank.angles_deg, bank.templates):
        kernel = adaptive_scale_kernel(template, target.shape)
        scores = corr.scores(kernel, stride)
        flat = int(np.argmax(scores))
        p, q = divmod(flat, scores.shape[1])
        if scores[p, q] > best_score:
            best_score = float(scores[p, q])
            best = (p * stride, q * stride, angle, kernel)
    row, col, angle, kernel = best
    return CoarseResult(row_c=row, col_c=col, theta_c_deg=angle,
                        score=score_at(target, kernel, row, col))


def fine_search(phi_t: PreprocessedImage, phi_r: PreprocessedImage,
                coarse: CoarseResult, fine_step: float = 1.0,
                fine_stride: int = 1, slack: int = 50,
                half_range: float = 10.0, downsample: int = 1) -> RigidResult:
    """Refine the coarse optimum on a slack-padded crop of the target.

    Searches angles {theta_c - half_range, ..., theta_c + half_range} at
    fine_step increments and every fine_stride placement within the crop.
    The crop always contains the coarse footprint, so the result can only
    match or beat the coarse optimum.
    """
    target = phi_t.image
    k_h, k_w = scaled_template_dims(phi_r.image.shape, target.shape)
    r0 = max(0, coarse.row_c - slack)
    r1 = min(target.shape[0], coarse.row_c + k_h + slack)
    c0 = max(0, coarse.col_c - slack)
    c1 = min(target.shape[1], coarse.col_c + k_w + slack)
    crop = target[r0:r1, c0:c1]
    corr = _TargetCorrelator(crop)
    count = int(round(2 * half_range / fine_step)) + 1
    best_score = -np.inf
    best = (0, 0, coarse.theta_c_deg, None)
    for j in range(count):
        angle = coarse.theta_c_deg + j * fine_step - half_range
        kernel = adaptive_scale_kernel(rotate_image(phi_r.image, angle),
                                       target.shape)
        scores = corr.scores(kernel, fine_stride)
        flat = int(np.argmax(scores))
        p, q = divmod(flat, scores.shape[1])
        if scores[p, q] > best_score:
            best_score = float(scores[p, q])
            best = (p * fine_stride, q * fine_stride, angle, kernel)
    p, q, angle, kernel = best
    row, col = r0 + p, c0 + q
    return RigidResult(row=row, col=col, theta_deg=angle % 360.0,
                       score=score_at(target, kernel, row, col),
                       downsample=downsample)


def register_pair(phi_r: PreprocessedImage, phi_t: PreprocessedImage,
                  config: SearchConfig = SearchConfig(), downsample: int = 1,
                  bank: RotationBank | None = None) -> RigidResult:
    """Full coarse + fine search; pass a prebuilt bank to amortize rotations."""
    if bank is None:
        bank = build_rotation_bank(phi_r, step=config.coarse_angle_deg)
    coarse = coarse_search(phi_t, bank, stride=config.coarse_stride)
    return fine_search(phi_t, phi_r, coarse,
                       fine_step=config.fine_angle_deg,
                       fine_stride=config.fine_stride,
                       slack=config.slack,
                       half_range=config.coarse_angle_deg,
                       downsample=downsample)


# -- correlation backends ----------------------------------------------------


class _TargetCorrelator:
    """Correlates many kernels against one target, caching its spectrum."""

    def __init__(self, target: np.ndarray):
        self.target = target
        self._target_f = target.astype(np.float64)
        self._fft = None

    def scores(self, kernel: np.ndarray, stride: int) -> np.ndarray:
        t_h, t_w = self.target.shape
        k_h, k_w = kernel.shape
        if k_h > t_h or k_w > t_w:
            raise KernelTooLargeError(
                f"kernel {kernel.shape} exceeds target {self.target.shape}")
        out_h = (t_h - k_h) // stride + 1
        out_w = (t_w - k_w) // stride + 1
        if out_h * out_w * k_h * k_w <= DIRECT_WORK_LIMIT:
            return _direct_scores(self.target, kernel, stride, out_h, out_w)
        if self._fft is None:
            self._fft = _target_fft(self._target_f)
        return _fft_scores(self._target_f, kernel, stride, self._fft)


def _direct_scores(target: np.ndarray, kernel: np.ndarray, stride: int,
                   out_h: int, out_w: int) -> np.ndarray:
    kern = kernel.astype(np.float64)
    windows = sliding_window_view(target, kernel.shape)[::stride, ::stride]
    windows = windows[:out_h, :out_w]
    out = np.empty((out_h, out_w), dtype=np.float64)
    block = max(1, DIRECT_BLOCK_ELEMS // max(1, out_w * kernel.size))
    for i in range(0, out_h, block):
        chunk = windows[i:i + block].astype(np.float64)
        out[i:i + block] = np.tensordot(chunk, kern, axes=([2, 3], [0, 1]))
    return out


def _target_fft(target_f: np.ndarray):
    shape = (sfft.next_fast_len(target_f.shape[0]),
             sfft.next_fast_len(target_f.shape[1]))
    return shape, sfft.rfft2(target_f, s=shape)


def _fft_scores(target_f: np.ndarray, kernel: np.ndarray, stride: int,
                target_fft) -> np.ndarray:
    shape, spectrum = target_fft
    t_h, t_w = target_f.shape
    k_h, k_w = kernel.shape
    kern_f = sfft.rfft2(kernel.astype(np.float64), s=shape)
    # circular correlation is wrap-free on the valid region when the FFT
    # shape covers the target
    full = sfft.irfft2(spectrum * np.conj(kern_f), s=shape)
    return full[:t_h - k_h + 1:stride, :t_w - k_w + 1:stride].copy()
