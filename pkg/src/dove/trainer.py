"""Two-stage latent-pixel training of the denoiser (the VAE stays frozen).

Stage 1 regresses the one-step latent estimate onto the HR latent. Stage 2
refines in pixel space, drawing each iteration either a single-frame image
batch (probability ``phi``) or a video batch pushed frame by frame through
the VAE.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from .diffusion import DEFAULT_T_STAR, make_schedule
from .errors import DataError, ShapeError, TrainingError
from .losses import LossWeights, PerceptualExtractor, stage1_loss, stage2_image_loss, video_loss_terms
from .models import Denoiser, TinyVAE, encode_clip, load_checkpoint, save_models
from .restorer import RestorerPipeline

log = logging.getLogger(__name__)

IMAGE, VIDEO = "image", "video"


@dataclass(frozen=True)
class TrainConfig:
    stage: int = 1
    phi: float = 0.8
    iters: int = 2000
    lr: float = 1e-3
    batch_size: int = 2
    clip_frames: int = 9
    betas: tuple[float, float] = (0.9, 0.95)
    eps: float = 1e-8
    weight_decay: float = 0.01
    grad_clip: float = 1.0
    weights: LossWeights = field(default_factory=LossWeights)
    t_star: int = DEFAULT_T_STAR
    scale: int = 4
    seed: int = 0
    crop: tuple[int, int] | None = None  # LR (h, w) random crop; stage 1 crops the matching latent window
    cache_latents: bool = True
    extractor_seed: int = 0
    lr_decay: str = "cosine"  # or "none"
    augment: bool = True  # stage 1: random horizontal flips and time reversal

    def __post_init__(self):
        if self.stage not in (1, 2):
            raise ValueError(f"stage must be 1 or 2, got {self.stage}")
        if not 0.0 <= self.phi <= 1.0:
            raise ValueError(f"phi must lie in [0, 1], got {self.phi}")
        if self.iters < 1:
            raise ValueError("iters must be >= 1")
        if self.lr < 0:
            raise ValueError("lr must be non-negative")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.lr_decay not in ("cosine", "none"):
            raise ValueError(f"lr_decay must be 'cosine' or 'none', got {self.lr_decay!r}")


# ------------------------------------------------------------------ optimizer


@dataclass
class OptState:
    step: int = 0
    m: dict[str, torch.Tensor] = field(default_factory=dict)
    v: dict[str, torch.Tensor] = field(default_factory=dict)


def adamw_step(params: dict[str, torch.Tensor], grads: dict[str, torch.Tensor], state: OptState,
               lr: float, betas: tuple[float, float] = (0.9, 0.95), eps: float = 1e-8,
               weight_decay: float = 0.0) -> dict[str, torch.Tensor]:
    """Bias-corrected adaptive-moment update with decoupled weight decay, in place."""
    for name, g in grads.items():
        if not torch.isfinite(g).all():
            raise TrainingError(f"non-finite gradient for {name}")
    b1, b2 = betas
    state.step += 1
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    with torch.no_grad():
        for name, p in params.items():
            g = grads[name]
            if name not in state.m:
                state.m[name] = torch.zeros_like(p)
                state.v[name] = torch.zeros_like(p)
            m, v = state.m[name], state.v[name]
            p.mul_(1.0 - lr * weight_decay)
            m.mul_(b1).add_(g, alpha=1.0 - b1)
            v.mul_(b2).addcmul_(g, g, value=1.0 - b2)
            p.sub_(lr * (m / c1) / ((v / c2).sqrt() + eps))
    return params


@dataclass
class TrainState:
    seed: int
    step: int = 0
    opt: OptState = field(default_factory=OptState)
    history: list[dict] = field(default_factory=list)


def sample_branch(state: TrainState, phi: float) -> str:
    """``image`` with probability ``phi``; a pure function of ``(seed, step)``."""
    u = np.random.default_rng([state.seed, state.step, 7]).random()
    return IMAGE if u < phi else VIDEO


def _step_rng(state: TrainState, stream: int) -> np.random.Generator:
    return np.random.default_rng([state.seed, state.step, stream])


def _named_trainable(module: torch.nn.Module) -> dict[str, torch.nn.Parameter]:
    return {n: p for n, p in module.named_parameters() if p.requires_grad}


def _clip_grads(grads: dict[str, torch.Tensor], max_norm: float) -> float:
    total = math.sqrt(sum(float((g.double() ** 2).sum()) for g in grads.values()))
    if max_norm and total > max_norm:
        for g in grads.values():
            g.mul_(max_norm / (total + 1e-12))
    return total


def lr_at(cfg: TrainConfig, step: int) -> float:
    """Learning rate for 0-based ``step``; cosine decay reaches zero at ``cfg.iters``."""
    if cfg.lr_decay == "none":
        return cfg.lr
    return 0.5 * cfg.lr * (1.0 + math.cos(math.pi * min(step, cfg.iters) / cfg.iters))


def _update(den: Denoiser, loss: torch.Tensor, state: TrainState, cfg: TrainConfig) -> float:
    if not torch.isfinite(loss):
        raise TrainingError(f"non-finite loss {float(loss.detach())} at step {state.step}")
    params = _named_trainable(den)
    grads = torch.autograd.grad(loss, list(params.values()), allow_unused=True)
    grads = {n: (g if g is not None else torch.zeros_like(p))
             for (n, p), g in zip(params.items(), grads)}
    norm = _clip_grads(grads, cfg.grad_clip)
    adamw_step(params, grads, state.opt, lr_at(cfg, state.step), cfg.betas, cfg.eps, cfg.weight_decay)
    return norm


def _log(state: TrainState, branch: str, loss: float, terms: dict, log_path=None) -> None:
    rec = {"step": state.step, "branch": branch, "loss": loss,
           "loss_terms": {k: float(v.detach() if torch.is_tensor(v) else v) for k, v in terms.items()}}
    state.history.append(rec)
    if log_path is not None:
        with open(log_path, "a") as fh:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def _freeze(vae: TinyVAE) -> None:
    vae.eval()
    for p in vae.parameters():
        p.requires_grad_(False)


def _check_pairs(pairs, name: str, frame_axis: bool, scale: int) -> None:
    if not pairs:
        raise DataError(f"{name} stream is empty")
    ndim = 4 if frame_axis else 3
    for lr, hr in pairs:
        lr, hr = np.asarray(lr), np.asarray(hr)
        if lr.ndim != ndim or hr.ndim != ndim or lr.shape[:-2] != hr.shape[:-2]:
            raise DataError(f"{name}: mismatched pair shapes {lr.shape} / {hr.shape}")
        if hr.shape[-2:] != (lr.shape[-2] * scale, lr.shape[-1] * scale):
            raise DataError(f"{name}: HR {hr.shape[-2:]} is not LR {lr.shape[-2:]} x{scale}")


# ------------------------------------------------------------------- stage 1


def stage1_latents(pipe: RestorerPipeline, lr, hr) -> tuple[torch.Tensor, torch.Tensor]:
    """Frame-wise latents ``(z_lr, z_hr)`` of one clip pair."""
    dt = pipe.dtype
    lr_t = torch.as_tensor(np.asarray(lr), dtype=dt)
    hr_t = torch.as_tensor(np.asarray(hr), dtype=dt)
    z_lr = pipe.latents(lr_t)
    z_hr = encode_clip(pipe.vae, hr_t)
    if z_lr.shape != z_hr.shape:
        raise ShapeError(f"LR latent {tuple(z_lr.shape)} != HR latent {tuple(z_hr.shape)}")
    return z_lr, z_hr


def stage1_objective(pipe: RestorerPipeline, z_pairs: Sequence[tuple[torch.Tensor, torch.Tensor]]) -> torch.Tensor:
    losses = [stage1_loss(pipe.denoise(z_lr), z_hr) for z_lr, z_hr in z_pairs]
    return torch.stack(losses).mean()


def _crop_latents(z_lr: torch.Tensor, z_hr: torch.Tensor, crop, scale: int, mcfg, rng: np.random.Generator):
    """Same random window of both latents; ``crop`` is in LR pixels, offsets are patch-aligned."""
    p = mcfg.patch
    h, w = z_lr.shape[-2:]
    ch = min(h, crop[0] * scale // mcfg.factor // p * p)
    cw = min(w, crop[1] * scale // mcfg.factor // p * p)
    if ch < p or cw < p:
        raise ValueError(f"crop {crop} is smaller than one latent patch")
    top = int(rng.integers(0, (h - ch) // p + 1)) * p
    left = int(rng.integers(0, (w - cw) // p + 1)) * p
    window = (..., slice(top, top + ch), slice(left, left + cw))
    return z_lr[window], z_hr[window]


def _pipe(vae, den, cfg: TrainConfig) -> RestorerPipeline:
    return RestorerPipeline(vae, den, make_schedule(den.cfg.T), t_star=cfg.t_star, scale=cfg.scale,
                            chunk_frames=max(cfg.clip_frames, 1))


def train_stage1(vae: TinyVAE, den: Denoiser, pairs: Sequence, cfg: TrainConfig,
                 state: TrainState | None = None, iters: int | None = None,
                 log_path=None) -> TrainState:
    """Latent-space adaptation on ``(lr, hr)`` clip pairs; updates ``den`` in place.

    ``state`` resumes a previous run; ``iters`` caps the number of further
    steps (default: run until ``cfg.iters`` total).
    """
    if cfg.stage != 1:
        raise ValueError("train_stage1 needs a stage-1 config")
    _check_pairs(pairs, "video", frame_axis=True, scale=cfg.scale)
    _freeze(vae)
    den.train()
    pipe = _pipe(vae, den, cfg)
    state = state or TrainState(seed=cfg.seed)

    cache: dict[int, tuple[torch.Tensor, torch.Tensor]] = {}

    def latents(i, flip):
        if (i, flip) in cache:
            return cache[i, flip]
        lr, hr = (np.asarray(a) for a in pairs[i])
        if flip:
            lr, hr = lr[..., ::-1], hr[..., ::-1]
        with torch.no_grad():
            z = stage1_latents(pipe, lr.copy(), hr.copy())
        if cfg.cache_latents:
            cache[i, flip] = z
        return z

    def sample(i, rng):
        flip, rev = rng.random(2) < 0.5 if cfg.augment else (False, False)
        z_lr, z_hr = latents(i, bool(flip))
        if rev:
            # the VAE is per-frame, so reversing time commutes with encoding
            z_lr, z_hr = z_lr.flip(0), z_hr.flip(0)
        if cfg.crop is not None:
            z_lr, z_hr = _crop_latents(z_lr, z_hr, cfg.crop, cfg.scale, den.cfg, rng)
        return z_lr, z_hr

    end = cfg.iters if iters is None else min(cfg.iters, state.step + iters)
    while state.step < end:
        rng = _step_rng(state, 1)
        idx = rng.choice(len(pairs), size=min(cfg.batch_size, len(pairs)), replace=False)
        loss = stage1_objective(pipe, [sample(int(i), rng) for i in idx])
        _update(den, loss, state, cfg)
        state.step += 1
        _log(state, VIDEO, float(loss.detach()), {"latent_mse": float(loss.detach())}, log_path)
    return state


# ------------------------------------------------------------------- stage 2


def _crop_pair(lr: np.ndarray, hr: np.ndarray, crop, scale: int, rng: np.random.Generator):
    if crop is None:
        return lr, hr
    ch, cw = crop
    h, w = lr.shape[-2:]
    if ch > h or cw > w:
        return lr, hr
    top = int(rng.integers(0, h - ch + 1))
    left = int(rng.integers(0, w - cw + 1))
    return (lr[..., top:top + ch, left:left + cw],
            hr[..., top * scale:(top + ch) * scale, left * scale:(left + cw) * scale])


def stage2_objective(pipe: RestorerPipeline, batch: Sequence, branch: str, weights: LossWeights,
                     ext: PerceptualExtractor) -> tuple[torch.Tensor, dict[str, torch.Tensor]]:
    """Mean pixel-space loss over ``batch`` of ``(lr, hr)`` pairs for one branch."""
    dt = pipe.dtype
    totals, terms_acc = [], {}
    for lr, hr in batch:
        lr_t = torch.as_tensor(np.asarray(lr), dtype=dt)
        hr_t = torch.as_tensor(np.asarray(hr), dtype=dt)
        if branch == IMAGE:
            sr = pipe(lr_t[None] if lr_t.ndim == 3 else lr_t)
            hr_b = hr_t[None] if hr_t.ndim == 3 else hr_t
            loss = stage2_image_loss(sr, hr_b, weights, ext)
            terms = {"image": loss}
        else:
            sr = pipe(lr_t)
            terms = video_loss_terms(sr, hr_t, ext)
            loss = terms["mse"] + weights.lambda1 * terms["dists"] + weights.lambda2 * terms["frame"]
        totals.append(loss)
        for k, v in terms.items():
            terms_acc[k] = terms_acc.get(k, 0.0) + v / len(batch)
    return torch.stack(totals).mean(), terms_acc


def train_stage2(vae: TinyVAE, den: Denoiser, videos: Sequence, images: Sequence, cfg: TrainConfig,
                 state: TrainState | None = None, iters: int | None = None,
                 log_path=None, ext: PerceptualExtractor | None = None) -> TrainState:
    """Pixel-space refinement mixing image and video batches by ``cfg.phi``."""
    if cfg.stage != 2:
        raise ValueError("train_stage2 needs a stage-2 config")
    if cfg.phi > 0:
        _check_pairs(images, "image", frame_axis=False, scale=cfg.scale)
    if cfg.phi < 1:
        _check_pairs(videos, "video", frame_axis=True, scale=cfg.scale)
        if any(len(np.asarray(lr)) < 2 for lr, _ in videos):
            raise DataError("video clips need at least two frames")
    _freeze(vae)
    den.train()
    pipe = _pipe(vae, den, cfg)
    ext = ext or PerceptualExtractor(cfg.extractor_seed)
    ext = ext.to(pipe.dtype)
    state = state or TrainState(seed=cfg.seed)

    end = cfg.iters if iters is None else min(cfg.iters, state.step + iters)
    while state.step < end:
        branch = sample_branch(state, cfg.phi)
        pool = images if branch == IMAGE else videos
        rng = _step_rng(state, 2)
        idx = rng.choice(len(pool), size=min(cfg.batch_size, len(pool)), replace=False)
        batch = [_crop_pair(np.asarray(pool[int(i)][0]), np.asarray(pool[int(i)][1]), cfg.crop,
                            cfg.scale, rng) for i in idx]
        loss, terms = stage2_objective(pipe, batch, branch, cfg.weights, ext)
        _update(den, loss, state, cfg)
        state.step += 1
        _log(state, branch, float(loss.detach()), terms, log_path)
    return state


# ------------------------------------------------------------- VAE pretrain


def pretrain_vae(vae: TinyVAE, frames: Sequence[np.ndarray], iters: int = 1500, lr: float = 2e-3,
                 batch_size: int = 8, crop: int = 32, seed: int = 0,
                 log_every: int = 0) -> list[float]:
    """Fit the autoencoder to reconstruct random crops of ``frames`` (each ``(3, H, W)``)."""
    if not len(frames):
        raise DataError("no frames to pretrain on")
    vae.train()
    params = dict(vae.named_parameters())
    for p in params.values():
        p.requires_grad_(True)
    opt = OptState()
    dt = next(vae.parameters()).dtype
    losses = []
    for step in range(iters):
        rng = np.random.default_rng([seed, step, 3])
        batch = []
        for i in rng.integers(0, len(frames), size=batch_size):
            f = np.asarray(frames[int(i)])
            h, w = f.shape[-2:]
            top = int(rng.integers(0, h - crop + 1))
            left = int(rng.integers(0, w - crop + 1))
            batch.append(f[:, top:top + crop, left:left + crop])
        x = torch.as_tensor(np.stack(batch), dtype=dt)
        rec = vae.decode_raw(vae.encode(x))
        loss = ((rec - x) ** 2).mean() + 0.1 * (rec - x).abs().mean()
        grads = torch.autograd.grad(loss, list(params.values()))
        grads = dict(zip(params, grads))
        _clip_grads(grads, 1.0)
        # cosine decay keeps the tail of the fit stable
        step_lr = lr * 0.5 * (1 + math.cos(math.pi * step / iters))
        adamw_step(params, grads, opt, step_lr, (0.9, 0.99), 1e-8, 0.0)
        losses.append(float(loss.detach()))
        if log_every and step % log_every == 0:
            log.info("vae step %d loss %.5f", step, float(loss.detach()))
    vae.encode_calls = vae.decode_calls = 0
    _freeze(vae)
    return losses


# -------------------------------------------------------------- checkpoints


def save_training(path, vae: TinyVAE, den: Denoiser, state: TrainState, cfg: TrainConfig,
                  run_fingerprint: str | None = None) -> None:
    extra = {}
    for name in state.opt.m:
        extra[f"opt.m.{name}"] = state.opt.m[name]
        extra[f"opt.v.{name}"] = state.opt.v[name]
    cfg_dict = asdict(cfg)
    meta = {"train": {"seed": state.seed, "step": state.step, "opt_step": state.opt.step,
                      "stage": cfg.stage, "config": cfg_dict},
            "run_fingerprint": run_fingerprint}
    save_models(path, vae, den, step=state.step, extra=extra, meta=meta)


def load_training_state(path) -> TrainState:
    ckpt = load_checkpoint(path)
    tr = ckpt.meta.get("train")
    if tr is None:
        return TrainState(seed=0)
    opt = OptState(step=tr["opt_step"])
    for key, val in ckpt.tensors.items():
        if key.startswith("opt.m."):
            opt.m[key[len("opt.m."):]] = val.clone()
        elif key.startswith("opt.v."):
            opt.v[key[len("opt.v."):]] = val.clone()
    return TrainState(seed=tr["seed"], step=tr["step"], opt=opt)


def write_log(history: list[dict], path) -> None:
    Path(path).write_text("".join(json.dumps(r, sort_keys=True) + "\n" for r in history))
