"""
One-step restoration, end to end
================================

A low-resolution clip is upscaled x4 with bilinear interpolation, pushed
frame by frame through the VAE encoder, denoised once at t=399 and decoded
frame by frame. The models here are untrained, so the point is the data
flow and the shapes, not the picture quality.
"""

import math

import numpy as np
import torch

from dove.diffusion import alpha_bar, make_schedule, one_step_denoise
from dove.media import VideoClip
from dove.models import Denoiser, ModelConfig, TinyVAE
from dove.restorer import RestorerPipeline, restore
from dove.synthetic import make_clip

schedule = make_schedule()          # linear betas 1e-4 .. 2e-2 over 1000 steps
ab = alpha_bar(schedule, 399)
print(f"alpha_bar(399) = {ab:.6f}; signal weight {math.sqrt(ab):.4f}, v weight {math.sqrt(1 - ab):.4f}")

# the denoise step itself is a fixed linear blend of the latent and the prediction
z, v = np.array(2.0), np.array(1.0)
print("blend at alpha_bar = 0.25:", float(one_step_denoise(z, v, schedule.from_betas([0.75]), 1)))

torch.manual_seed(0)
cfg = ModelConfig()
pipe = RestorerPipeline(TinyVAE(cfg), Denoiser(cfg))

lr = VideoClip(make_clip(np.random.default_rng(0), 8, 40, 40).frames)
sr = restore(pipe, lr)
print(f"LR {lr.frames.shape} -> SR {sr.frames.shape}, denoiser calls: {pipe.denoiser.calls}")
