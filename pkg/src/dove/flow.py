"""Dense coarse-to-fine Lucas-Kanade optical flow and flow-based warping.

A flow field is a ``(2, H, W)`` array of ``(dx, dy)`` displacements in
pixels: the content at ``(row, col)`` in ``prev`` appears at
``(row + dy, col + dx)`` in ``next``.
"""

from __future__ import annotations

import numpy as np
from scipy import ndimage

from .errors import ShapeError
from .media import rgb_to_luma

LEVELS = 4
ITERATIONS = 6
WINDOW_SIGMA = 2.0
MIN_LEVEL_SIZE = 12
REG = 1e-6
STEP_CLIP = 1.0  # px per iteration at the current level
MEDIAN_SIZE = 5


def _gray(frame: np.ndarray) -> np.ndarray:
    frame = np.asarray(frame, dtype=np.float64)
    if frame.ndim == 3:
        return rgb_to_luma(frame)
    if frame.ndim == 2:
        return frame
    raise ShapeError(f"expected (3, H, W) or (H, W) frame, got {frame.shape}")


def _pyramid(img: np.ndarray, levels: int) -> list[np.ndarray]:
    pyr = [img]
    for _ in range(levels - 1):
        if min(pyr[-1].shape) < 2 * MIN_LEVEL_SIZE:
            break
        pyr.append(ndimage.gaussian_filter(pyr[-1], 1.0, mode="nearest")[::2, ::2])
    return pyr


def sample(img: np.ndarray, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
    """Bilinear lookup with edge clamping."""
    return ndimage.map_coordinates(img, [rows, cols], order=1, mode="nearest")


def _lk_step(i1: np.ndarray, i2w: np.ndarray, valid: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # samples that fell outside the second frame carry no data term
    avg = 0.5 * (i1 + i2w)
    iy, ix = np.gradient(avg)
    it = (i2w - i1) * valid
    ix, iy = ix * valid, iy * valid
    g = lambda a: ndimage.gaussian_filter(a, WINDOW_SIGMA, mode="nearest")
    sxx, syy, sxy = g(ix * ix) + REG, g(iy * iy) + REG, g(ix * iy)
    sxt, syt = g(ix * it), g(iy * it)
    det = sxx * syy - sxy * sxy
    du = (-syy * sxt + sxy * syt) / det
    dv = (sxy * sxt - sxx * syt) / det
    return du, dv


def compute_flow(prev, next, levels: int = LEVELS, iterations: int = ITERATIONS) -> np.ndarray:
    """Flow from ``prev`` to ``next``; fixed pyramid depth and iteration count, no randomness."""
    a, b = _gray(prev), _gray(next)
    if a.shape != b.shape:
        raise ShapeError(f"frame shapes differ: {a.shape} vs {b.shape}")
    pa, pb = _pyramid(a, levels), _pyramid(b, levels)

    u = np.zeros_like(pa[-1])
    v = np.zeros_like(pa[-1])
    for lvl in range(len(pa) - 1, -1, -1):
        i1, i2 = pa[lvl], pb[lvl]
        if u.shape != i1.shape:
            zoom = (i1.shape[0] / u.shape[0], i1.shape[1] / u.shape[1])
            u = ndimage.zoom(u, zoom, order=1, mode="nearest", grid_mode=True) * 2.0
            v = ndimage.zoom(v, zoom, order=1, mode="nearest", grid_mode=True) * 2.0
        rows, cols = np.mgrid[0:i1.shape[0], 0:i1.shape[1]].astype(np.float64)
        for _ in range(iterations):
            rr, cc = rows + v, cols + u
            valid = ((rr >= 0) & (rr <= i1.shape[0] - 1) & (cc >= 0) & (cc <= i1.shape[1] - 1))
            du, dv = _lk_step(i1, sample(i2, rr, cc), valid.astype(np.float64))
            u = u + np.clip(du, -STEP_CLIP, STEP_CLIP)
            v = v + np.clip(dv, -STEP_CLIP, STEP_CLIP)
        u = ndimage.median_filter(u, size=MEDIAN_SIZE, mode="nearest")
        v = ndimage.median_filter(v, size=MEDIAN_SIZE, mode="nearest")
    return np.stack([u, v])


def warp(frame: np.ndarray, flow: np.ndarray) -> np.ndarray:
    """Backward warp: ``out[r, c] = frame[r + dy, c + dx]`` for every channel."""
    h, w = flow.shape[-2:]
    rows, cols = np.mgrid[0:h, 0:w].astype(np.float64)
    rr, cc = rows + flow[1], cols + flow[0]
    frame = np.asarray(frame, dtype=np.float64)
    if frame.ndim == 2:
        return sample(frame, rr, cc)
    return np.stack([sample(ch, rr, cc) for ch in frame])


def in_bounds(flow: np.ndarray) -> np.ndarray:
    h, w = flow.shape[-2:]
    rows, cols = np.mgrid[0:h, 0:w].astype(np.float64)
    rr, cc = rows + flow[1], cols + flow[0]
    return (rr >= 0) & (rr <= h - 1) & (cc >= 0) & (cc <= w - 1)


def consistency_mask(backward: np.ndarray, forward: np.ndarray, threshold: float = 1.0) -> np.ndarray:
    """Pixels of frame ``t`` whose backward flow is undone by the forward flow within ``threshold`` px.

    ``backward`` maps frame ``t`` to ``t-1``; ``forward`` maps ``t-1`` to ``t``.
    """
    round_trip = backward + warp(forward, backward)
    err = np.sqrt((round_trip**2).sum(axis=0))
    return (err < threshold) & in_bounds(backward)


def magnitude(flow: np.ndarray) -> np.ndarray:
    return np.sqrt((np.asarray(flow) ** 2).sum(axis=0))
