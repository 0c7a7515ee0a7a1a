"""Frame-directory video I/O and resampling primitives.

Pixels are float arrays in [0, 1] laid out channel-first, ``(3, H, W)`` for a
frame and ``(n, 3, H, W)`` for a clip. At rest, a clip is a directory of
``000001.png``, ``000002.png``, ... plus a ``meta.json`` sidecar.

All resamplers use half-pixel centers: output pixel ``k`` samples the input
at ``(k + 0.5) * in / out - 0.5``, with out-of-range taps clamped to the edge.
"""

from __future__ import annotations

import json
import os
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import ClipLoadError, ShapeError

META_NAME = "meta.json"
COLORSPACE = "rgb8"
_FRAME_RE = re.compile(r"^(\d{6})\.png$")


def _check_pixels(pixels: np.ndarray, ndim: int) -> np.ndarray:
    pixels = np.asarray(pixels, dtype=np.float64)
    if pixels.ndim != ndim or pixels.shape[-3] != 3:
        raise ShapeError(f"expected {ndim}-d array with 3 channels, got shape {pixels.shape}")
    if pixels.shape[-1] < 1 or pixels.shape[-2] < 1:
        raise ShapeError(f"empty spatial dims {pixels.shape}")
    if not np.all(np.isfinite(pixels)):
        raise ValueError("pixel values must be finite")
    if pixels.min() < 0.0 or pixels.max() > 1.0:
        raise ValueError("pixel values must lie in [0, 1]")
    return pixels


@dataclass(frozen=True)
class VideoClip:
    """A clip of ``n >= 1`` same-sized RGB frames."""

    frames: np.ndarray
    fps: float = 25.0

    def __post_init__(self):
        object.__setattr__(self, "frames", _check_pixels(self.frames, 4))
        if len(self.frames) < 1:
            raise ShapeError("a clip needs at least one frame")
        if not self.fps > 0:
            raise ValueError(f"fps must be positive, got {self.fps}")

    @property
    def n(self) -> int:
        return self.frames.shape[0]

    @property
    def height(self) -> int:
        return self.frames.shape[2]

    @property
    def width(self) -> int:
        return self.frames.shape[3]

    def deltas(self) -> np.ndarray:
        """Frame-to-frame differences ``x[t] - x[t-1]``, shape ``(n-1, 3, H, W)``."""
        return np.diff(self.frames, axis=0)

    def __len__(self) -> int:
        return self.n


@dataclass(frozen=True)
class ImageSample:
    pixels: np.ndarray = field()

    def __post_init__(self):
        object.__setattr__(self, "pixels", _check_pixels(self.pixels, 3))

    def as_clip(self, fps: float = 25.0) -> VideoClip:
        return VideoClip(self.pixels[None], fps=fps)


# --------------------------------------------------------------------------- I/O


def write_clip(clip: VideoClip, path: str | os.PathLike, force: bool = False) -> None:
    path = Path(path)
    if path.exists():
        if not path.is_dir():
            raise FileExistsError(f"{path} exists and is not a directory")
        if any(path.iterdir()):
            if not force:
                raise FileExistsError(f"{path} is not empty; pass force=True to overwrite")
            for old in path.iterdir():
                if old.name == META_NAME or _FRAME_RE.match(old.name):
                    old.unlink()
    path.mkdir(parents=True, exist_ok=True)

    quantized = np.round(clip.frames * 255.0).astype(np.uint8)
    for idx, frame in enumerate(quantized, start=1):
        Image.fromarray(np.ascontiguousarray(frame.transpose(1, 2, 0)), mode="RGB").save(
            path / f"{idx:06d}.png", optimize=False
        )
    meta = {
        "fps": float(clip.fps),
        "width": clip.width,
        "height": clip.height,
        "frame_count": clip.n,
        "colorspace": COLORSPACE,
    }
    (path / META_NAME).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def read_meta(path: str | os.PathLike) -> dict:
    meta_path = Path(path) / META_NAME
    if not meta_path.is_file():
        raise ClipLoadError(f"missing {META_NAME} in {path}")
    try:
        meta = json.loads(meta_path.read_text())
    except json.JSONDecodeError as exc:
        raise ClipLoadError(f"unreadable {meta_path}: {exc}") from exc
    for key in ("fps", "width", "height", "frame_count"):
        if key not in meta:
            raise ClipLoadError(f"{meta_path} lacks key {key!r}")
    return meta


def list_frames(path: str | os.PathLike) -> list[Path]:
    """Frame files in numeric order; raises on numbering gaps."""
    path = Path(path)
    numbered = []
    for entry in path.iterdir():
        m = _FRAME_RE.match(entry.name)
        if m:
            numbered.append((int(m.group(1)), entry))
    numbered.sort()
    for expected, (idx, _) in enumerate(numbered, start=1):
        if idx != expected:
            raise ClipLoadError(f"frame numbering gap in {path}: expected {expected:06d}, found {idx:06d}")
    return [p for _, p in numbered]


def read_clip(path: str | os.PathLike) -> VideoClip:
    path = Path(path)
    if not path.is_dir():
        raise ClipLoadError(f"{path} is not a directory")
    meta = read_meta(path)
    files = list_frames(path)
    if not files:
        raise ClipLoadError(f"no frames in {path}")
    if len(files) != int(meta["frame_count"]):
        raise ClipLoadError(f"{path}: meta says {meta['frame_count']} frames, found {len(files)}")

    frames = []
    for f in files:
        with Image.open(f) as im:
            arr = np.asarray(im.convert("RGB"), dtype=np.uint8)
        if arr.shape[:2] != (int(meta["height"]), int(meta["width"])):
            raise ClipLoadError(f"{f.name} has shape {arr.shape[:2]}, meta says "
                                f"{(meta['height'], meta['width'])}")
        frames.append(arr.transpose(2, 0, 1))
    return VideoClip(np.stack(frames).astype(np.float64) / 255.0, fps=float(meta["fps"]))


def list_clips(root: str | os.PathLike) -> list[Path]:
    """Sub-directories of ``root`` holding a clip, sorted by name."""
    root = Path(root)
    return sorted(p for p in root.iterdir() if p.is_dir() and (p / META_NAME).is_file())


# -------------------------------------------------------------------- resampling


def _cubic(x: np.ndarray, a: float = -0.5) -> np.ndarray:
    x = np.abs(x)
    return np.where(
        x <= 1,
        (a + 2) * x**3 - (a + 3) * x**2 + 1,
        np.where(x < 2, a * x**3 - 5 * a * x**2 + 8 * a * x - 4 * a, 0.0),
    )


def _linear(x: np.ndarray) -> np.ndarray:
    return np.clip(1.0 - np.abs(x), 0.0, None)


def _weights(n_in: int, n_out: int, kernel: str, antialias: bool) -> np.ndarray:
    """Dense ``(n_out, n_in)`` resampling matrix with half-pixel centers.

    Taps falling outside the input are folded onto the nearest edge sample.
    """
    scale = n_in / n_out
    centers = (np.arange(n_out) + 0.5) * scale - 0.5
    stretch = max(scale, 1.0) if antialias else 1.0
    fn, support = (_linear, 1.0) if kernel == "bilinear" else (_cubic, 2.0)

    w = np.zeros((n_out, n_in))
    if kernel == "bilinear" and not antialias:
        src = np.clip(centers, 0, n_in - 1)
        lo = np.floor(src).astype(int)
        hi = np.minimum(lo + 1, n_in - 1)
        frac = src - lo
        rows = np.arange(n_out)
        np.add.at(w, (rows, lo), 1.0 - frac)
        np.add.at(w, (rows, hi), frac)
        return w

    reach = int(np.ceil(support * stretch)) + 1
    for k, c in enumerate(centers):
        taps = np.arange(int(np.floor(c)) - reach, int(np.floor(c)) + reach + 1)
        vals = fn((taps - c) / stretch)
        vals = vals / vals.sum()
        np.add.at(w[k], np.clip(taps, 0, n_in - 1), vals)
    return w


def _resize(pixels: np.ndarray, new_h: int, new_w: int, kernel: str, antialias: bool) -> np.ndarray:
    if int(new_h) < 1 or int(new_w) < 1:
        raise ValueError(f"target size must be positive, got {new_h}x{new_w}")
    h, w = pixels.shape[-2:]
    wh = _weights(h, int(new_h), kernel, antialias)
    ww = _weights(w, int(new_w), kernel, antialias)
    return np.matmul(np.matmul(wh, pixels), ww.T)


def resize_bilinear(frame: np.ndarray, new_h: int, new_w: int) -> np.ndarray:
    """Bilinear resize of ``(..., H, W)`` pixels, no antialiasing.

    Matches ``torch.nn.functional.interpolate(mode="bilinear", align_corners=False)``.
    """
    return _resize(np.asarray(frame, dtype=np.float64), new_h, new_w, "bilinear", antialias=False)


def resize_bicubic(frame: np.ndarray, new_h: int, new_w: int) -> np.ndarray:
    """Keys bicubic (a=-0.5) resize with antialiasing when shrinking.

    Output is clipped to [0, 1] since cubic overshoot can leave the range.
    """
    out = _resize(np.asarray(frame, dtype=np.float64), new_h, new_w, "bicubic", antialias=True)
    return np.clip(out, 0.0, 1.0)


def upscale_clip(clip: VideoClip, scale: int) -> VideoClip:
    return VideoClip(resize_bilinear(clip.frames, clip.height * scale, clip.width * scale), fps=clip.fps)


def rgb_to_luma(pixels: np.ndarray) -> np.ndarray:
    """BT.601 luma over the channel axis (``-3``)."""
    coeffs = np.array([0.299, 0.587, 0.114])
    return np.tensordot(np.moveaxis(pixels, -3, -1), coeffs, axes=([-1], [0]))
