"""Fidelity and temporal-consistency metrics, and corpus-level reports."""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy import ndimage

from .errors import ShapeError
from .flow import compute_flow, consistency_mask, warp
from .media import META_NAME, list_clips, read_clip

METRICS = ("psnr", "ssim", "warp")
FULL_REFERENCE = {"psnr", "ssim"}
WARP_SCALE = 1e3


def _pair(x, y) -> tuple[np.ndarray, np.ndarray]:
    x, y = np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ShapeError(f"shape mismatch: {x.shape} vs {y.shape}")
    return x, y


def psnr(x, y, peak: float = 1.0) -> float:
    """PSNR in dB over all elements; ``math.inf`` when the inputs are identical."""
    x, y = _pair(x, y)
    err = float(np.mean((x - y) ** 2))
    if err == 0.0:
        return math.inf
    return 10.0 * math.log10(peak**2 / err)


def clip_psnr(x, y, peak: float = 1.0) -> float:
    """Mean of per-frame PSNR over ``(n, 3, H, W)`` clips."""
    x, y = _pair(x, y)
    return float(np.mean([psnr(a, b, peak) for a, b in zip(x, y)]))


def _gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    ax = np.arange(size) - (size - 1) / 2
    g = np.exp(-(ax**2) / (2 * sigma**2))
    return g / g.sum()


def _filter_valid(img: np.ndarray, g: np.ndarray) -> np.ndarray:
    half = len(g) // 2
    out = ndimage.correlate1d(img, g, axis=-1, mode="constant")
    out = ndimage.correlate1d(out, g, axis=-2, mode="constant")
    return out[..., half:img.shape[-2] - half, half:img.shape[-1] - half]


def ssim(x, y, peak: float = 1.0, win_size: int = 11, sigma: float = 1.5) -> float:
    """Gaussian-windowed SSIM, valid window positions only, averaged over channels and frames."""
    x, y = _pair(x, y)
    if x.ndim < 2 or min(x.shape[-2:]) < win_size:
        raise ShapeError(f"image {x.shape[-2:]} smaller than the {win_size}x{win_size} window")
    c1, c2 = (0.01 * peak) ** 2, (0.03 * peak) ** 2
    g = _gaussian_window(win_size, sigma)
    flat_x = x.reshape(-1, *x.shape[-2:])
    flat_y = y.reshape(-1, *y.shape[-2:])
    vals = []
    for a, b in zip(flat_x, flat_y):
        mx, my = _filter_valid(a, g), _filter_valid(b, g)
        sxx = _filter_valid(a * a, g) - mx * mx
        syy = _filter_valid(b * b, g) - my * my
        sxy = _filter_valid(a * b, g) - mx * my
        num = (2 * mx * my + c1) * (2 * sxy + c2)
        den = (mx**2 + my**2 + c1) * (sxx + syy + c2)
        vals.append(np.mean(num / den))
    return float(np.mean(vals))


FlowFn = Callable[[np.ndarray, np.ndarray], np.ndarray]


def warping_error_raw(frames, flow_fn: FlowFn = compute_flow, threshold: float = 1.0) -> float:
    """Mean over consecutive pairs of the occlusion-masked MSE between frame ``t`` and warped ``t-1``."""
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim != 4 or frames.shape[0] < 2:
        raise ValueError("warping error needs a clip of at least two frames")
    errs = []
    for prev, cur in zip(frames[:-1], frames[1:]):
        backward = flow_fn(cur, prev)
        forward = flow_fn(prev, cur)
        mask = consistency_mask(backward, forward, threshold)
        if not mask.any():
            errs.append(0.0)
            continue
        resid = (cur - warp(prev, backward)) ** 2
        errs.append(float((resid * mask).sum() / (mask.sum() * cur.shape[0])))
    return float(np.mean(errs))


def warping_error(frames, flow_fn: FlowFn = compute_flow, threshold: float = 1.0) -> float:
    """Flow-warping error in the conventional x1e-3 reporting unit."""
    return warping_error_raw(frames, flow_fn, threshold) * WARP_SCALE


@dataclass
class MetricReport:
    metrics: list[str]
    per_clip: dict[str, dict[str, float]] = field(default_factory=dict)
    mean: dict[str, float] = field(default_factory=dict)
    config: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        enc = lambda v: "inf" if v == math.inf else (None if math.isnan(v) else v)
        return {
            "metrics": list(self.metrics),
            "per_clip": {k: {m: enc(v) for m, v in d.items()} for k, d in self.per_clip.items()},
            "mean": {m: enc(v) for m, v in self.mean.items()},
            "config": self.config,
        }

    def write(self, path: str | os.PathLike) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")


def _clip_dirs(root: Path) -> dict[str, Path]:
    if (root / META_NAME).is_file():
        return {root.name: root}
    return {p.name: p for p in list_clips(root)}


def evaluate(pred_dir, ref_dir=None, metrics: Sequence[str] = METRICS) -> MetricReport:
    metrics = list(metrics)
    unknown = set(metrics) - set(METRICS)
    if unknown:
        raise ValueError(f"unknown metrics {sorted(unknown)}")
    if ref_dir is None and FULL_REFERENCE & set(metrics):
        raise ValueError(f"{sorted(FULL_REFERENCE & set(metrics))} need a reference directory")

    preds = _clip_dirs(Path(pred_dir))
    refs = _clip_dirs(Path(ref_dir)) if ref_dir is not None else {}
    if not preds:
        raise FileNotFoundError(f"no clips under {pred_dir}")
    report = MetricReport(metrics=metrics, config={"pred": str(pred_dir),
                                                   "ref": None if ref_dir is None else str(ref_dir)})
    for name, path in preds.items():
        pred = read_clip(path).frames
        row = {}
        if FULL_REFERENCE & set(metrics):
            if name not in refs and len(refs) == 1 and len(preds) == 1:
                ref = read_clip(next(iter(refs.values()))).frames
            elif name in refs:
                ref = read_clip(refs[name]).frames
            else:
                raise FileNotFoundError(f"no reference clip for {name}")
            if "psnr" in metrics:
                row["psnr"] = clip_psnr(pred, ref)
            if "ssim" in metrics:
                row["ssim"] = ssim(pred, ref)
        if "warp" in metrics:
            row["warp"] = warping_error(pred) if len(pred) > 1 else math.nan
        report.per_clip[name] = row
    for m in metrics:
        vals = [row[m] for row in report.per_clip.values() if not math.isnan(row[m])]
        report.mean[m] = float(np.mean(vals)) if vals else math.nan
    return report
