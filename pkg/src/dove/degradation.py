"""Seeded second-order degradation chain for synthesizing LQ/HQ pairs.

Each of two stages applies blur -> resize -> noise -> block-DCT compression,
then a final bicubic resize lands on ``1/scale`` of the input. All random
choices are resolved up front into a concrete, serializable recipe. Within a
clip the kernel, resize factor, noise level and quality are shared by every
frame; only the noise realization changes from frame to frame.

Parameter ranges are desk-scale surrogates, not the values of any reference
pipeline.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field

import numpy as np
from scipy import fft, ndimage

from .errors import ShapeError
from .media import ImageSample, VideoClip, resize_bicubic, resize_bilinear


@dataclass(frozen=True)
class StageRanges:
    blur_prob: float = 1.0
    aniso_prob: float = 0.3
    sigma: tuple[float, float] = (0.2, 2.0)
    resize: tuple[float, float] = (0.5, 1.2)
    resize_modes: tuple[str, ...] = ("bilinear", "bicubic")
    noise_prob: float = 1.0
    noise_sigma: tuple[float, float] = (1.0 / 255, 8.0 / 255)
    gray_noise_prob: float = 0.4
    poisson_prob: float = 0.0
    poisson_scale: tuple[float, float] = (2.0, 4.0)  # log10 of photon count
    jpeg_prob: float = 1.0
    quality: tuple[float, float] = (60.0, 95.0)


@dataclass(frozen=True)
class DegradationConfig:
    first: StageRanges = field(default_factory=StageRanges)
    second: StageRanges = field(default_factory=lambda: StageRanges(
        sigma=(0.2, 1.2), resize=(0.6, 1.1), noise_sigma=(1.0 / 255, 5.0 / 255), quality=(70.0, 95.0)))
    scale: int = 4

    def validate(self) -> None:
        if self.scale < 1:
            raise ValueError("scale must be >= 1")
        for name in ("first", "second"):
            r = getattr(self, name)
            for key in ("sigma", "resize", "noise_sigma", "quality", "poisson_scale"):
                lo, hi = getattr(r, key)
                if lo > hi:
                    raise ValueError(f"{name}.{key}: low {lo} > high {hi}")
            if r.sigma[0] < 0 or r.noise_sigma[0] < 0:
                raise ValueError(f"{name}: sigma ranges must be non-negative")
            if r.resize[0] <= 0:
                raise ValueError(f"{name}.resize: factors must be positive")
            if not (1 <= r.quality[0] and r.quality[1] <= 100):
                raise ValueError(f"{name}.quality must lie in [1, 100]")
            for key in ("blur_prob", "aniso_prob", "noise_prob", "gray_noise_prob",
                        "poisson_prob", "jpeg_prob"):
                if not 0 <= getattr(r, key) <= 1:
                    raise ValueError(f"{name}.{key} must lie in [0, 1]")
            bad = set(r.resize_modes) - {"bilinear", "bicubic"}
            if bad or not r.resize_modes:
                raise ValueError(f"{name}.resize_modes: unsupported {sorted(bad)}")

    @classmethod
    def from_dict(cls, d: dict) -> "DegradationConfig":
        def stage(s):
            return StageRanges(**{k: tuple(v) if isinstance(v, list) else v for k, v in s.items()})
        kw = dict(d)
        for name in ("first", "second"):
            if name in kw:
                base = dataclasses.asdict(getattr(cls(), name))
                base.update(kw[name])
                kw[name] = stage(base)
        return cls(**kw)


@dataclass(frozen=True)
class Blur:
    sigma_x: float
    sigma_y: float
    theta: float
    ksize: int


@dataclass(frozen=True)
class Noise:
    sigma: float
    gray: bool
    poisson_scale: float | None = None  # photons at full intensity


@dataclass(frozen=True)
class StageRecipe:
    blur: Blur | None
    resize: float
    resize_mode: str
    noise: Noise | None
    quality: int | None


@dataclass(frozen=True)
class DegradationRecipe:
    seed: int
    stages: tuple[StageRecipe, ...]
    scale: int = 4
    final_mode: str = "bicubic"

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "DegradationRecipe":
        stages = []
        for s in d["stages"]:
            stages.append(StageRecipe(
                blur=Blur(**s["blur"]) if s["blur"] else None,
                resize=s["resize"], resize_mode=s["resize_mode"],
                noise=Noise(**s["noise"]) if s["noise"] else None,
                quality=s["quality"]))
        return cls(seed=d["seed"], stages=tuple(stages), scale=d["scale"], final_mode=d["final_mode"])

    @classmethod
    def identity(cls, scale: int = 4, seed: int = 0) -> "DegradationRecipe":
        plain = StageRecipe(blur=None, resize=1.0, resize_mode="bicubic", noise=None, quality=None)
        return cls(seed=seed, stages=(plain, plain), scale=scale)


def _draw_stage(rng: np.random.Generator, r: StageRanges) -> StageRecipe:
    blur = None
    if rng.random() < r.blur_prob:
        sx = float(rng.uniform(*r.sigma))
        if rng.random() < r.aniso_prob:
            sy = float(rng.uniform(*r.sigma))
            theta = float(rng.uniform(0, np.pi))
        else:
            sy, theta = sx, 0.0
        ksize = int(min(21, 2 * np.ceil(3 * max(sx, sy, 1e-3)) + 1))
        blur = Blur(sx, sy, theta, ksize)
    resize = float(rng.uniform(*r.resize))
    mode = str(r.resize_modes[rng.integers(len(r.resize_modes))])
    noise = None
    if rng.random() < r.noise_prob:
        sigma = float(rng.uniform(*r.noise_sigma))
        gray = bool(rng.random() < r.gray_noise_prob)
        poisson = float(10 ** rng.uniform(*r.poisson_scale)) if rng.random() < r.poisson_prob else None
        noise = Noise(sigma, gray, poisson)
    quality = int(round(rng.uniform(*r.quality))) if rng.random() < r.jpeg_prob else None
    return StageRecipe(blur, resize, mode, noise, quality)


def make_recipe(cfg: DegradationConfig, seed: int) -> DegradationRecipe:
    cfg.validate()
    rng = np.random.default_rng(seed)
    stages = (_draw_stage(rng, cfg.first), _draw_stage(rng, cfg.second))
    return DegradationRecipe(seed=int(seed), stages=stages, scale=cfg.scale)


# ----------------------------------------------------------------- operators


def gaussian_kernel(blur: Blur) -> np.ndarray:
    half = blur.ksize // 2
    ax = np.arange(-half, half + 1, dtype=np.float64)
    xx, yy = np.meshgrid(ax, ax)
    c, s = np.cos(blur.theta), np.sin(blur.theta)
    sx2, sy2 = max(blur.sigma_x, 1e-6) ** 2, max(blur.sigma_y, 1e-6) ** 2
    u = c * xx + s * yy
    v = -s * xx + c * yy
    k = np.exp(-0.5 * (u**2 / sx2 + v**2 / sy2))
    return k / k.sum()


def blur_frames(frames: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Convolve every channel of ``(..., H, W)`` with a normalized 2-d kernel, reflect padding."""
    flat = frames.reshape(-1, *frames.shape[-2:])
    out = np.stack([ndimage.convolve(ch, kernel, mode="reflect") for ch in flat])
    return out.reshape(frames.shape)


_JPEG_LUMA = np.array([
    [16, 11, 10, 16, 24, 40, 51, 61], [12, 12, 14, 19, 26, 58, 60, 55],
    [14, 13, 16, 24, 40, 57, 69, 56], [14, 17, 22, 29, 51, 87, 80, 62],
    [18, 22, 37, 56, 68, 109, 103, 77], [24, 35, 55, 64, 81, 104, 113, 92],
    [49, 64, 78, 87, 103, 121, 120, 101], [72, 92, 95, 98, 112, 100, 103, 99]], dtype=np.float64)
_JPEG_CHROMA = np.full((8, 8), 99.0)
_JPEG_CHROMA[:4, :4] = [[17, 18, 24, 47], [18, 21, 26, 66], [24, 26, 56, 99], [47, 66, 99, 99]]


def quant_table(base: np.ndarray, quality: int) -> np.ndarray:
    """IJG quality scaling of a base quantization table."""
    quality = int(np.clip(quality, 1, 100))
    s = 5000.0 / quality if quality < 50 else 200.0 - 2.0 * quality
    return np.clip(np.floor((base * s + 50.0) / 100.0), 1.0, None)


def _rgb_to_ycc(x: np.ndarray) -> np.ndarray:
    r, g, b = x[..., 0, :, :], x[..., 1, :, :], x[..., 2, :, :]
    y = 0.299 * r + 0.587 * g + 0.114 * b
    cb = -0.168736 * r - 0.331264 * g + 0.5 * b
    cr = 0.5 * r - 0.418688 * g - 0.081312 * b
    return np.stack([y, cb, cr], axis=-3)


def _ycc_to_rgb(x: np.ndarray) -> np.ndarray:
    y, cb, cr = x[..., 0, :, :], x[..., 1, :, :], x[..., 2, :, :]
    r = y + 1.402 * cr
    g = y - 0.344136 * cb - 0.714136 * cr
    b = y + 1.772 * cb
    return np.stack([r, g, b], axis=-3)


def compress_blocks(frames: np.ndarray, quality: int) -> np.ndarray:
    """Block-DCT quantization surrogate for lossy compression.

    Frames are converted to YCbCr in 0..255 units, split into 8x8 blocks
    (edge-padded), DCT-quantized with the standard tables at ``quality`` and
    reconstructed.
    """
    h, w = frames.shape[-2:]
    ph, pw = -h % 8, -w % 8
    pad = [(0, 0)] * (frames.ndim - 2) + [(0, ph), (0, pw)]
    ycc = _rgb_to_ycc(np.pad(frames, pad, mode="edge")) * 255.0
    H, W = ycc.shape[-2:]
    blocks = ycc.reshape(*ycc.shape[:-2], H // 8, 8, W // 8, 8)
    coef = fft.dctn(blocks, axes=(-3, -1), norm="ortho")
    tables = np.stack([quant_table(_JPEG_LUMA, quality), quant_table(_JPEG_CHROMA, quality),
                       quant_table(_JPEG_CHROMA, quality)])
    q = tables[:, None, :, None, :]
    coef = np.round(coef / q) * q
    rec = fft.idctn(coef, axes=(-3, -1), norm="ortho").reshape(ycc.shape) / 255.0
    return np.clip(_ycc_to_rgb(rec)[..., :h, :w], 0.0, 1.0)


def add_noise(frames: np.ndarray, noise: Noise, rng: np.random.Generator) -> np.ndarray:
    out = frames
    if noise.poisson_scale:
        vals = noise.poisson_scale
        out = rng.poisson(np.clip(out, 0, 1) * vals) / vals
    shape = out.shape[:-3] + (1,) + out.shape[-2:] if noise.gray else out.shape
    out = out + rng.normal(0.0, noise.sigma, size=shape)
    return np.clip(out, 0.0, 1.0)


def _resize(frames: np.ndarray, h: int, w: int, mode: str) -> np.ndarray:
    if (h, w) == frames.shape[-2:]:
        return frames
    fn = resize_bilinear if mode == "bilinear" else resize_bicubic
    return np.clip(fn(frames, h, w), 0.0, 1.0)


def degrade_frames(frames: np.ndarray, recipe: DegradationRecipe) -> np.ndarray:
    """Apply ``recipe`` to ``(n, 3, H, W)`` frames."""
    H, W = frames.shape[-2:]
    s = recipe.scale
    if H % s or W % s:
        raise ShapeError(f"frame size {H}x{W} not divisible by scale {s}")
    rng = np.random.default_rng([recipe.seed, 1])
    out = np.asarray(frames, dtype=np.float64)
    for st in recipe.stages:
        if st.blur is not None:
            out = blur_frames(out, gaussian_kernel(st.blur))
        if st.resize != 1.0:
            h = max(1, int(round(out.shape[-2] * st.resize)))
            w = max(1, int(round(out.shape[-1] * st.resize)))
            out = _resize(out, h, w, st.resize_mode)
        if st.noise is not None:
            out = add_noise(out, st.noise, rng)
        if st.quality is not None:
            out = compress_blocks(out, st.quality)
    return _resize(out, H // s, W // s, recipe.final_mode)


def apply_degradation(media, recipe: DegradationRecipe):
    if isinstance(media, ImageSample):
        return ImageSample(degrade_frames(media.pixels[None], recipe)[0])
    if isinstance(media, VideoClip):
        return VideoClip(degrade_frames(media.frames, recipe), fps=media.fps)
    raise TypeError(f"cannot degrade {type(media).__name__}")
