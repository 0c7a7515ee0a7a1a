"""Training objectives: latent MSE, pixel MSE + perceptual, frame-difference."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ShapeError


@dataclass(frozen=True)
class LossWeights:
    lambda1: float = 1.0  # perceptual term
    lambda2: float = 1.0  # frame-difference term

    def __post_init__(self):
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ValueError("loss weights must be non-negative")


def _as_tensor(x) -> torch.Tensor:
    return x if torch.is_tensor(x) else torch.as_tensor(np.asarray(x, dtype=np.float64))


def _same_shape(a: torch.Tensor, b: torch.Tensor) -> None:
    if tuple(a.shape) != tuple(b.shape):
        raise ShapeError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")


def mse(a, b) -> torch.Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _same_shape(a, b)
    return ((a - b) ** 2).mean()


stage1_loss = mse


class PerceptualExtractor(nn.Module):
    """Frozen random-weight conv pyramid standing in for a pretrained backbone.

    Stage 0 is the image itself; each later stage halves resolution with
    average pooling and applies a 3x3 conv + ReLU. Weights depend only on
    ``seed``.
    """

    def __init__(self, seed: int = 0, channels: tuple[int, ...] = (16, 32, 64)):
        super().__init__()
        gen = torch.Generator().manual_seed(seed)
        self.seed = seed
        self.channels = channels
        weights, biases = [], []
        ch_in = 3
        for ch in channels:
            bound = 1.0 / np.sqrt(ch_in * 9)
            weights.append(nn.Parameter((torch.rand(ch, ch_in, 3, 3, generator=gen) * 2 - 1) * bound * np.sqrt(3),
                                        requires_grad=False))
            biases.append(nn.Parameter(torch.rand(ch, generator=gen) * 0.1, requires_grad=False))
            ch_in = ch
        self.weights = nn.ParameterList(weights)
        self.biases = nn.ParameterList(biases)

    @property
    def n_scales(self) -> int:
        return len(self.channels)

    def forward(self, x: torch.Tensor) -> list[torch.Tensor]:
        feats = [x]
        h = x
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if i > 0:
                h = F.avg_pool2d(h, 2, ceil_mode=True)
            h = F.relu(F.conv2d(F.pad(h, (1, 1, 1, 1), mode="replicate"), w.to(h.dtype), b.to(h.dtype)))
            feats.append(h)
        return feats


def dists_like(x, y, ext: PerceptualExtractor, c1: float = 1e-6, c2: float = 1e-6) -> torch.Tensor:
    """Structure/texture distance over extractor features, averaged over a batch.

    Per feature channel, texture similarity compares global means and
    structure similarity compares global (co)variances; all channels of all
    stages are weighted equally. Accepts ``(3, H, W)`` or ``(N, 3, H, W)``.
    """
    x, y = _as_tensor(x), _as_tensor(y)
    _same_shape(x, y)
    if x.ndim == 3:
        x, y = x[None], y[None]
    fx, fy = ext(x), ext(y)
    texture, structure, n_ch = 0.0, 0.0, 0
    for a, b in zip(fx, fy):
        mx, my = a.mean(dim=(2, 3)), b.mean(dim=(2, 3))
        vx = ((a - mx[..., None, None]) ** 2).mean(dim=(2, 3))
        vy = ((b - my[..., None, None]) ** 2).mean(dim=(2, 3))
        cov = ((a - mx[..., None, None]) * (b - my[..., None, None])).mean(dim=(2, 3))
        texture = texture + ((2 * mx * my + c1) / (mx**2 + my**2 + c1)).sum(dim=1)
        structure = structure + ((2 * cov + c2) / (vx + vy + c2)).sum(dim=1)
        n_ch += a.shape[1]
    score = 1.0 - (texture + structure) / (2 * n_ch)
    return score.clamp(0.0, 1.0).mean()


def frame_diff_loss(x_sr, x_hr) -> torch.Tensor:
    """Mean absolute mismatch of consecutive-frame deltas, averaged over the ``n-1`` pairs."""
    x_sr, x_hr = _as_tensor(x_sr), _as_tensor(x_hr)
    _same_shape(x_sr, x_hr)
    if x_sr.shape[0] < 2:
        raise ValueError("frame difference loss needs at least two frames")
    d_sr = x_sr[1:] - x_sr[:-1]
    d_hr = x_hr[1:] - x_hr[:-1]
    return (d_sr - d_hr).abs().mean()


def stage2_image_loss(x_sr, x_hr, w: LossWeights, ext: PerceptualExtractor) -> torch.Tensor:
    loss = mse(x_sr, x_hr)
    if w.lambda1:
        loss = loss + w.lambda1 * dists_like(x_sr, x_hr, ext)
    return loss


def video_loss_terms(x_sr, x_hr, ext: PerceptualExtractor) -> dict[str, torch.Tensor]:
    """The three unweighted video terms; perceptual distance is a per-frame mean."""
    x_sr, x_hr = _as_tensor(x_sr), _as_tensor(x_hr)
    _same_shape(x_sr, x_hr)
    if x_sr.shape[0] < 2:
        raise ValueError("video loss needs at least two frames")
    return {"mse": mse(x_sr, x_hr), "dists": dists_like(x_sr, x_hr, ext),
            "frame": frame_diff_loss(x_sr, x_hr)}


def stage2_video_loss(x_sr, x_hr, w: LossWeights, ext: PerceptualExtractor) -> torch.Tensor:
    terms = video_loss_terms(x_sr, x_hr, ext)
    return terms["mse"] + w.lambda1 * terms["dists"] + w.lambda2 * terms["frame"]
