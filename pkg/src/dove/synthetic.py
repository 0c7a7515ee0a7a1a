"""Procedural clips for tests, demos and the desk-scale experiments.

Scenes are a smooth textured background with static anti-aliased shapes,
a few striped sprites moving at constant velocity, and an optional camera
pan. Everything is drawn from an explicit ``numpy`` generator.
"""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import ndimage

from .degradation import DegradationConfig, apply_degradation, make_recipe
from .media import VideoClip, write_clip


def smooth_texture(rng: np.random.Generator, h: int, w: int, sigma: float = 3.0) -> np.ndarray:
    """Band-limited noise normalized to [0, 1], shape ``(3, h, w)``."""
    tex = ndimage.gaussian_filter(rng.random((3, h, w)), (0, sigma, sigma), mode="wrap")
    tex -= tex.min(axis=(1, 2), keepdims=True)
    return tex / np.maximum(tex.max(axis=(1, 2), keepdims=True), 1e-12)


def _disc(rr, cc, r0, c0, radius):
    return np.clip(radius - np.hypot(rr - r0, cc - c0) + 0.5, 0.0, 1.0)


def _rect(rr, cc, r0, c0, hh, ww):
    a = np.clip(np.minimum(rr - (r0 - hh / 2), (r0 + hh / 2) - rr) + 0.5, 0.0, 1.0)
    b = np.clip(np.minimum(cc - (c0 - ww / 2), (c0 + ww / 2) - cc) + 0.5, 0.0, 1.0)
    return a * b


def _shape(kind, rr, cc, r0, c0, size):
    if kind == "disc":
        return _disc(rr, cc, r0, c0, size / 2)
    return _rect(rr, cc, r0, c0, size, size * 1.3)


def _stripes(rr, cc, period, angle, phase):
    return 0.5 + 0.5 * np.sign(np.sin(2 * np.pi * (rr * np.sin(angle) + cc * np.cos(angle)) / period + phase))


def make_background(rng: np.random.Generator, h: int, w: int, n_shapes: int = 6) -> np.ndarray:
    rr, cc = np.mgrid[0:h, 0:w].astype(np.float64)
    base = rng.uniform(0.2, 0.8, size=3)[:, None, None]
    grad = rng.uniform(-0.2, 0.2, size=(3, 1, 1)) * (cc / w - 0.5)[None]
    img = base + grad + 0.25 * (smooth_texture(rng, h, w, 4.0) - 0.5)
    img = img + 0.08 * (smooth_texture(rng, h, w, 1.0) - 0.5)
    for _ in range(n_shapes):
        kind = "disc" if rng.random() < 0.5 else "rect"
        mask = _shape(kind, rr, cc, rng.uniform(0, h), rng.uniform(0, w), rng.uniform(6, h / 3))
        color = rng.uniform(0, 1, size=3)[:, None, None]
        if rng.random() < 0.4:
            color = color * (0.6 + 0.4 * _stripes(rr, cc, rng.uniform(4, 10), rng.uniform(0, np.pi), 0.0))
        img = img * (1 - mask) + color * mask
    return np.clip(img, 0.0, 1.0)


def make_clip(rng: np.random.Generator, n: int, h: int, w: int, n_sprites: int = 3,
              max_speed: float = 2.0, pan: tuple[float, float] | None = None,
              fps: float = 25.0) -> VideoClip:
    """A clip of ``n`` frames with moving sprites; ``pan=(dy, dx)`` px/frame shifts the camera."""
    if pan is None:
        pan = tuple(rng.uniform(-1.0, 1.0, size=2))
    margin = int(np.ceil(max(abs(pan[0]), abs(pan[1])) * n)) + 2
    H, W = h + 2 * margin, w + 2 * margin
    bg = make_background(rng, H, W)
    rr, cc = np.mgrid[0:h, 0:w].astype(np.float64)
    sprites = []
    for _ in range(n_sprites):
        sprites.append(dict(
            kind="disc" if rng.random() < 0.5 else "rect",
            r=rng.uniform(0.2 * h, 0.8 * h), c=rng.uniform(0.2 * w, 0.8 * w),
            size=rng.uniform(0.12, 0.3) * min(h, w),
            v=rng.uniform(-max_speed, max_speed, size=2),
            color=rng.uniform(0, 1, size=3)[:, None, None],
            period=rng.uniform(3, 8), angle=rng.uniform(0, np.pi)))
    frames = []
    for t in range(n):
        oy, ox = margin + pan[0] * t, margin + pan[1] * t
        if float(oy).is_integer() and float(ox).is_integer():
            img = bg[:, int(oy):int(oy) + h, int(ox):int(ox) + w].copy()
        else:
            img = np.stack([ndimage.map_coordinates(ch, [rr + oy, cc + ox], order=1, mode="nearest")
                            for ch in bg])
        for s in sprites:
            r0, c0 = s["r"] + s["v"][0] * t, s["c"] + s["v"][1] * t
            mask = _shape(s["kind"], rr, cc, r0, c0, s["size"])
            tex = 0.55 + 0.45 * _stripes(rr - r0, cc - c0, s["period"], s["angle"], 0.0)
            img = img * (1 - mask) + (s["color"] * tex) * mask
        frames.append(np.clip(img, 0.0, 1.0))
    return VideoClip(np.stack(frames), fps=fps)


def make_pairs(seed: int, count: int, n: int = 9, lr_size: tuple[int, int] = (32, 64), scale: int = 4,
               cfg: DegradationConfig | None = None) -> list[tuple[np.ndarray, np.ndarray]]:
    """``count`` degraded ``(lr, hr)`` clip pairs; each clip gets its own recipe."""
    cfg = cfg or DegradationConfig(scale=scale)
    rng = np.random.default_rng(seed)
    pairs = []
    for k in range(count):
        hr = make_clip(rng, n, lr_size[0] * scale, lr_size[1] * scale)
        lr = apply_degradation(hr, make_recipe(cfg, seed * 100003 + k))
        pairs.append((lr.frames, hr.frames))
    return pairs


def make_image_pairs(seed: int, count: int, lr_size: tuple[int, int] = (32, 64), scale: int = 4,
                     cfg: DegradationConfig | None = None) -> list[tuple[np.ndarray, np.ndarray]]:
    return [(lr[0], hr[0]) for lr, hr in make_pairs(seed, count, 1, lr_size, scale, cfg)]


# ---------------------------------------------------------- curation corpus

CURATION_LABELS = ("valid", "static", "lowres", "short", "scenecut")


def _labeled_clip(rng: np.random.Generator, label: str, k: int, h: int, w: int, frames: int,
                  min_frames: int) -> VideoClip:
    if label == "valid":
        pan = (0.0, 2.0) if k % 2 == 0 else (1.0, -1.0)
        return make_clip(rng, frames, h, w, pan=pan)
    if label == "static":
        still = make_clip(rng, 1, h, w, n_sprites=2, pan=(0.0, 0.0)).frames[0]
        return VideoClip(np.repeat(still[None], frames, axis=0))
    if label == "lowres":
        return make_clip(rng, frames, h - 8, w, pan=(0.0, 2.0))
    if label == "short":
        return make_clip(rng, min_frames, h, w, pan=(0.0, 2.0))
    if label == "scenecut":
        half = frames // 2
        a = make_clip(rng, half, h, w, pan=(0.0, 2.0)).frames * 0.3
        b = 0.7 + 0.3 * make_clip(rng, frames - half, h, w, pan=(0.0, 2.0)).frames
        return VideoClip(np.concatenate([a, b]))
    raise ValueError(f"unknown label {label!r}")


def make_curation_corpus(root, seed: int = 0, per_label: int = 4, size: tuple[int, int] = (72, 96),
                         frames: int = 24, min_frames: int = 16,
                         labels: Sequence[str] = CURATION_LABELS) -> dict[str, bool]:
    """Write a labeled corpus under ``root``; returns clip name -> expected acceptance.

    Meant for a config with ``min_short_side`` just below ``size[0]``,
    ``min_frames`` as given, and a motion threshold well below 1 px/frame.
    """
    root = Path(root)
    rng = np.random.default_rng(seed)
    h, w = size
    expected = {}
    for k in range(per_label):
        for label in labels:
            name = f"{label}_{k:02d}"
            write_clip(_labeled_clip(rng, label, k, h, w, frames, min_frames), root / name)
            expected[name] = label == "valid"
    return expected


def make_smoke_corpus(root, seed: int = 0) -> dict[str, bool]:
    """The 8-clip corpus of the end-to-end smoke chain: four valid clips and one of each reject."""
    expected = make_curation_corpus(root, seed, per_label=4, labels=("valid",))
    rng = np.random.default_rng([seed, 1])
    for label in CURATION_LABELS[1:]:
        write_clip(_labeled_clip(rng, label, 0, 72, 96, 24, 16), Path(root) / f"{label}_00")
        expected[f"{label}_00"] = False
    return expected
