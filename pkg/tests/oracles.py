"""Independent straight-line reference implementations.

Everything here is deliberately naive (per-pixel loops, exhaustive
enumeration) and shares no code with the package, so agreement is evidence
of correctness rather than of shared bugs.
"""
from __future__ import annotations

import math

import numpy as np


def correlate_bruteforce(target: np.ndarray, kernel: np.ndarray,
                         stride: int) -> np.ndarray:
    """Triple-loop valid-mode correlation in exact Python integers."""
    t_h, t_w = target.shape
    k_h, k_w = kernel.shape
    out_h = (t_h - k_h) // stride + 1
    out_w = (t_w - k_w) // stride + 1
    out = np.zeros((out_h, out_w), dtype=np.float64)
    for p in range(out_h):
        for q in range(out_w):
            acc = 0
            for u in range(k_h):
                for v in range(k_w):
                    acc += int(target[p * stride + u, q * stride + v]) * int(kernel[u, v])
            out[p, q] = float(acc)
    return out


def placement_scores_bruteforce(target: np.ndarray, kernel: np.ndarray,
                                stride: int) -> np.ndarray:
    """Like correlate_bruteforce but with per-window numpy sums (faster),
    for exhaustive argmax checks on images up to 128 px."""
    t_h, t_w = target.shape
    k_h, k_w = kernel.shape
    kern = kernel.astype(np.int64)
    out_h = (t_h - k_h) // stride + 1
    out_w = (t_w - k_w) // stride + 1
    out = np.zeros((out_h, out_w), dtype=np.float64)
    tgt = target.astype(np.int64)
    for p in range(out_h):
        for q in range(out_w):
            window = tgt[p * stride:p * stride + k_h, q * stride:q * stride + k_w]
            out[p, q] = float(int(np.sum(window * kern)))
    return out


def argmax_all_angles_bruteforce(target: np.ndarray, kernels: list[np.ndarray],
                                 stride: int) -> tuple[int, int, int, float]:
    """Exhaustive (angle_idx, row, col, score) argmax, ties to the lowest
    angle index then row then column."""
    best = None
    for idx, kernel in enumerate(kernels):
        scores = placement_scores_bruteforce(target, kernel, stride)
        for p in range(scores.shape[0]):
            for q in range(scores.shape[1]):
                cand = (scores[p, q], -idx, -(p * stride), -(q * stride))
                if best is None or cand > best:
                    best = cand
    score, nidx, nrow, ncol = best
    return -nidx, -nrow, -ncol, score


def grayscale_pixel(r: int, g: int, b: int) -> int:
    return int(math.floor(0.299 * r + 0.587 * g + 0.114 * b + 0.5))


def reference_pipeline_bruteforce(crop: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Per-pixel evaluation of the six reference preprocessing steps."""
    rows, cols = mask.shape
    gray = [[grayscale_pixel(*crop[r, c]) for c in range(cols)] for r in range(rows)]
    # histogram equalization
    hist = [0] * 256
    for r in range(rows):
        for c in range(cols):
            hist[gray[r][c]] += 1
    cdf = []
    acc = 0
    for v in range(256):
        acc += hist[v]
        cdf.append(acc)
    n = rows * cols
    cdf_min = next(cdf[v] for v in range(256) if hist[v] > 0)
    if n != cdf_min:
        gray = [[int(math.floor(255.0 * (cdf[gray[r][c]] - cdf_min) / (n - cdf_min) + 0.5))
                 for c in range(cols)] for r in range(rows)]
    # invert
    gray = [[255 - gray[r][c] for c in range(cols)] for r in range(rows)]
    # bright-floor
    gray = [[255 if gray[r][c] < 50 else gray[r][c] for c in range(cols)] for r in range(rows)]
    # min-max rescale
    flat = [gray[r][c] for r in range(rows) for c in range(cols)]
    lo, hi = min(flat), max(flat)
    if hi == lo:
        gray = [[0] * cols for _ in range(rows)]
    else:
        gray = [[int(math.floor((gray[r][c] - lo) / (hi - lo) * 255.0 + 0.5))
                 for c in range(cols)] for r in range(rows)]
    # background zeroing
    out = np.zeros((rows, cols), dtype=np.uint8)
    for r in range(rows):
        for c in range(cols):
            out[r, c] = 0 if mask[r, c] == 0 else gray[r][c]
    return out


def target_pipeline_bruteforce(thumb: np.ndarray) -> np.ndarray:
    """Per-pixel evaluation of the target preprocessing steps."""
    rows, cols = thumb.shape[:2]
    gray = [[grayscale_pixel(*thumb[r, c]) for c in range(cols)] for r in range(rows)]
    gray = [[255 if gray[r][c] < 30 else gray[r][c] for c in range(cols)] for r in range(rows)]
    blurred = [[0] * cols for _ in range(rows)]
    for r in range(rows):
        for c in range(cols):
            acc = 0
            for dr in (-1, 0, 1):
                for dc in (-1, 0, 1):
                    rr = min(max(r + dr, 0), rows - 1)
                    cc = min(max(c + dc, 0), cols - 1)
                    acc += gray[rr][cc]
            blurred[r][c] = int(math.floor(acc / 9.0 + 0.5))
    out = np.zeros((rows, cols), dtype=np.uint8)
    for r in range(rows):
        for c in range(cols):
            out[r, c] = 255 - blurred[r][c]
    return out


def smallest_window_bruteforce(marginal: np.ndarray, need: float) -> tuple[int, int]:
    """All-pairs enumeration of the first smallest window with sum >= need."""
    n = len(marginal)
    best = None
    for a in range(n):
        for b in range(a + 1, n + 1):
            if marginal[a:b].sum() >= need:
                cand = (b - a, a, b)
                if best is None or cand < best:
                    best = cand
                break  # longer b for same a cannot be smaller
    return best[1], best[2]


def roi_bruteforce(mask: np.ndarray, coverage: float) -> tuple[int, int, int, int]:
    """Rows-then-columns smallest dense windows, threshold on full total."""
    total = mask.sum()
    need = coverage * total
    r0, r1 = smallest_window_bruteforce(mask.sum(axis=1), need)
    c0, c1 = smallest_window_bruteforce(mask[r0:r1].sum(axis=0), need)
    return r0, c0, r1, c1


def patch_windows_bruteforce(shape: tuple[int, int], patch: int,
                             stride: int) -> list[tuple[int, int]]:
    """All window anchors including the edge-clamped trailing ones."""
    def starts(extent):
        out = list(range(0, extent - patch + 1, stride))
        if out[-1] != extent - patch:
            out.append(extent - patch)
        return out

    return [(r, c) for r in starts(shape[0]) for c in starts(shape[1])]


def tile_starts_bruteforce(extent: int, size: int, overlap: float) -> list[int]:
    """Stride plan with clamped final start, duplicates removed."""
    stride = size - int(math.floor(size * overlap + 0.5))
    starts = []
    pos = 0
    while True:
        start = min(pos, extent - size)
        if start not in starts:
            starts.append(start)
        if pos >= extent - size:
            break
        pos += stride
    return starts


def block_vote_bruteforce(mask: np.ndarray, block: int) -> np.ndarray:
    rows, cols = mask.shape
    out_r = math.ceil(rows / block)
    out_c = math.ceil(cols / block)
    grid = np.zeros((out_r, out_c), dtype=np.uint8)
    for i in range(out_r):
        for j in range(out_c):
            cells = []
            for r in range(i * block, min((i + 1) * block, rows)):
                for c in range(j * block, min((j + 1) * block, cols)):
                    cells.append(int(mask[r, c]))
            grid[i, j] = 1 if sum(cells) * 2 >= len(cells) else 0
    return grid


def pearson_bruteforce(x: np.ndarray, y: np.ndarray) -> float:
    xf = x.astype(np.float64).ravel()
    yf = y.astype(np.float64).ravel()
    xm, ym = xf.mean(), yf.mean()
    num = float(((xf - xm) * (yf - ym)).sum())
    den = math.sqrt(float(((xf - xm) ** 2).sum()) * float(((yf - ym) ** 2).sum()))
    return num / den if den else 0.0
