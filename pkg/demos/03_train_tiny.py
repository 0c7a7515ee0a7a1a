"""
A few minutes of training
=========================

Pretrain the toy VAE, freeze it, then run a short Stage-1 (latent MSE) and a
short Stage-2 (pixel losses, images mixed with videos at phi = 0.8). PSNR on
held-out clips is printed next to the bilinear x4 baseline. The acceptance
suite runs the same recipe at full length.
"""

import numpy as np
import torch

from dove.losses import PerceptualExtractor, dists_like
from dove.metrics import clip_psnr
from dove.media import VideoClip
from dove.models import Denoiser, ModelConfig, TinyVAE
from dove.restorer import RestorerPipeline, bilinear_baseline, restore
from dove.synthetic import make_image_pairs, make_pairs
from dove.trainer import TrainConfig, pretrain_vae, train_stage1, train_stage2

torch.manual_seed(0)
train, test = make_pairs(1, 8), make_pairs(2, 2)
images = make_image_pairs(3, 16)

cfg = ModelConfig()
vae, den = TinyVAE(cfg), Denoiser(cfg)
pretrain_vae(vae, [f for _, hr in train for f in hr], iters=300)

pipe = RestorerPipeline(vae, den)
ext = PerceptualExtractor(0)


def report(tag):
    sr = [restore(pipe, VideoClip(lr)).frames for lr, _ in test]
    p = np.mean([clip_psnr(s, hr) for s, (_, hr) in zip(sr, test)])
    d = np.mean([float(dists_like(torch.tensor(s), torch.tensor(hr), ext)) for s, (_, hr) in zip(sr, test)])
    print(f"{tag:10s} PSNR {p:6.2f} dB   DISTS-like {d:.4f}")


base = np.mean([clip_psnr(bilinear_baseline(VideoClip(lr)).frames, hr) for lr, hr in test])
print(f"{'bilinear':10s} PSNR {base:6.2f} dB")
report("init")
train_stage1(vae, den, train, TrainConfig(iters=100, batch_size=4, crop=(16, 32)))
report("stage 1")
train_stage2(vae, den, train, images, TrainConfig(stage=2, iters=30, lr=2e-4, crop=(16, 32)))
report("stage 2")
