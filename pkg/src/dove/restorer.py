"""One-step super-resolution: bilinear upscale, encode, denoise once, decode."""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F

from .diffusion import DEFAULT_T_STAR, NoiseSchedule, check_timestep, make_schedule, one_step_denoise
from .errors import ShapeError
from .media import ImageSample, VideoClip, upscale_clip
from .models import Denoiser, TinyVAE, decode_clip, encode_clip


@dataclass
class RestorerPipeline:
    vae: TinyVAE
    denoiser: Denoiser
    schedule: NoiseSchedule = None
    t_star: int = DEFAULT_T_STAR
    scale: int = 4
    chunk_frames: int = 25

    def __post_init__(self):
        if self.schedule is None:
            self.schedule = make_schedule(self.denoiser.cfg.T)
        check_timestep(self.schedule, self.t_star)
        if self.scale < 1:
            raise ValueError(f"scale must be >= 1, got {self.scale}")
        if self.chunk_frames < 1:
            raise ValueError("chunk_frames must be >= 1")

    @property
    def dtype(self) -> torch.dtype:
        return next(self.denoiser.parameters()).dtype

    def upscale(self, frames: torch.Tensor) -> torch.Tensor:
        h, w = frames.shape[-2:]
        return F.interpolate(frames, size=(h * self.scale, w * self.scale), mode="bilinear",
                             align_corners=False)

    def latents(self, lr_frames: torch.Tensor) -> torch.Tensor:
        """LR frames -> ``z_lr``: per-frame bilinear upscale then per-frame encode."""
        f = self.vae.cfg.factor
        h, w = lr_frames.shape[-2:]
        if (h * self.scale) % f or (w * self.scale) % f:
            raise ShapeError(f"upscaled size {(h * self.scale, w * self.scale)} not divisible by {f}")
        return encode_clip(self.vae, self.upscale(lr_frames))

    def denoise(self, z_lr: torch.Tensor) -> torch.Tensor:
        """Single v-prediction step over the whole latent clip (chunked only if too long)."""
        out = []
        for start in range(0, z_lr.shape[0], self.chunk_frames):
            z = z_lr[start:start + self.chunk_frames]
            out.append(one_step_denoise(z, self.denoiser(z, self.t_star), self.schedule, self.t_star))
        return torch.cat(out)

    def forward(self, lr_frames: torch.Tensor) -> torch.Tensor:
        """Differentiable path on ``(n, 3, h, w)`` tensors; returns ``(n, 3, s*h, s*w)``."""
        if lr_frames.ndim != 4 or lr_frames.shape[1] != 3:
            raise ShapeError(f"expected (n, 3, h, w) frames, got {tuple(lr_frames.shape)}")
        return decode_clip(self.vae, self.denoise(self.latents(lr_frames)))

    __call__ = forward


def restore(pipe: RestorerPipeline, lr: VideoClip) -> VideoClip:
    frames = torch.as_tensor(lr.frames, dtype=pipe.dtype)
    with torch.no_grad():
        out = pipe(frames)
    return VideoClip(out.double().numpy().clip(0.0, 1.0), fps=lr.fps)


def restore_image(pipe: RestorerPipeline, img: ImageSample) -> ImageSample:
    return ImageSample(restore(pipe, img.as_clip()).frames[0])


def bilinear_baseline(lr: VideoClip, scale: int = 4) -> VideoClip:
    """The plain bilinear upscale used as the no-learning reference."""
    return upscale_clip(lr, scale)
