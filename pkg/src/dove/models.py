"""Toy-scale VAE and spatiotemporal transformer denoiser, plus checkpoint I/O.

The VAE is strictly per-frame: frames are folded into the batch axis, so
encoding a clip frame by frame and encoding it in one call are the same
computation. Temporal mixing happens only inside the denoiser.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import (CapacityError, CorruptCheckpointError,
                     IncompatibleCheckpointError, ShapeError)


@dataclass(frozen=True)
class ModelConfig:
    latent_channels: int = 8
    factor: int = 4
    vae_width: int = 32
    width: int = 128
    depth: int = 2
    heads: int = 4
    patch: int = 2
    mlp_ratio: int = 4
    max_tokens: int = 8192
    T: int = 1000
    temporal: bool = True

    def __post_init__(self):
        if self.factor < 1 or self.factor & (self.factor - 1):
            raise ValueError(f"factor must be a power of two, got {self.factor}")
        if self.width % self.heads:
            raise ValueError("width must be divisible by heads")
        if self.width % 4:
            raise ValueError("width must be divisible by 4 for 2-d position codes")

    def fingerprint(self) -> str:
        return config_fingerprint(dataclasses.asdict(self))


def config_fingerprint(values: dict) -> str:
    """Stable hash of a nested mapping of plain values."""
    blob = json.dumps(values, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


# ----------------------------------------------------------------------- VAE


class TinyVAE(nn.Module):
    """Deterministic per-frame conv autoencoder with spatial factor ``f``."""

    def __init__(self, cfg: ModelConfig = ModelConfig()):
        super().__init__()
        self.cfg = cfg
        w, c = cfg.vae_width, cfg.latent_channels
        n_down = int(math.log2(cfg.factor))

        enc = [nn.Conv2d(3, w, 3, padding=1, padding_mode="replicate"), nn.SiLU()]
        ch = w
        for _ in range(n_down):
            enc += [nn.Conv2d(ch, 2 * w, 3, stride=2, padding=1, padding_mode="replicate"), nn.SiLU()]
            ch = 2 * w
        enc += [nn.Conv2d(ch, ch, 3, padding=1, padding_mode="replicate"), nn.SiLU(),
                nn.Conv2d(ch, c, 1)]
        self.encoder = nn.Sequential(*enc)

        dec = [nn.Conv2d(c, 2 * w, 3, padding=1, padding_mode="replicate"), nn.SiLU()]
        ch = 2 * w
        for i in range(n_down):
            out = w if i == n_down - 1 else 2 * w
            dec += [nn.Upsample(scale_factor=2, mode="nearest"),
                    nn.Conv2d(ch, out, 3, padding=1, padding_mode="replicate"), nn.SiLU()]
            ch = out
        dec += [nn.Conv2d(ch, 3, 3, padding=1, padding_mode="replicate")]
        self.decoder = nn.Sequential(*dec)

        self.encode_calls = 0
        self.decode_calls = 0

    def encode(self, frames: torch.Tensor) -> torch.Tensor:
        """``(N, 3, H, W)`` pixels -> ``(N, c, H/f, W/f)`` latents."""
        f = self.cfg.factor
        if frames.ndim != 4 or frames.shape[1] != 3:
            raise ShapeError(f"expected (N, 3, H, W) frames, got {tuple(frames.shape)}")
        if frames.shape[-2] % f or frames.shape[-1] % f:
            raise ShapeError(f"frame size {tuple(frames.shape[-2:])} not divisible by {f}")
        self.encode_calls += frames.shape[0]
        return self.encoder(frames * 2.0 - 1.0)

    def decode_raw(self, latents: torch.Tensor) -> torch.Tensor:
        if latents.ndim != 4 or latents.shape[1] != self.cfg.latent_channels:
            raise ShapeError(f"expected (N, {self.cfg.latent_channels}, h, w) latents, "
                             f"got {tuple(latents.shape)}")
        self.decode_calls += latents.shape[0]
        return (self.decoder(latents) + 1.0) * 0.5

    def decode(self, latents: torch.Tensor) -> torch.Tensor:
        return self.decode_raw(latents).clamp(0.0, 1.0)


def encode_frame(vae: TinyVAE, frame) -> torch.Tensor:
    """One ``(3, H, W)`` frame -> one-frame latent clip ``(1, c, H/f, W/f)``."""
    frame = torch.as_tensor(np.asarray(frame) if not torch.is_tensor(frame) else frame,
                            dtype=next(vae.parameters()).dtype)
    return vae.encode(frame[None])


def decode_frame(vae: TinyVAE, latent: torch.Tensor) -> torch.Tensor:
    if latent.ndim == 3:
        latent = latent[None]
    if latent.shape[0] != 1:
        raise ShapeError("decode_frame takes a single-frame latent")
    return vae.decode(latent)[0]


def encode_clip(vae: TinyVAE, frames: torch.Tensor) -> torch.Tensor:
    """Frame-by-frame encode of ``(n, 3, H, W)``, stacked to ``(n, c, h, w)``."""
    return torch.cat([vae.encode(frames[i:i + 1]) for i in range(frames.shape[0])])


def decode_clip(vae: TinyVAE, latents: torch.Tensor) -> torch.Tensor:
    return torch.cat([vae.decode(latents[i:i + 1]) for i in range(latents.shape[0])])


# ------------------------------------------------------------------ denoiser


def sinusoidal(positions: torch.Tensor, dim: int) -> torch.Tensor:
    half = dim // 2
    freqs = torch.exp(-math.log(10000.0) * torch.arange(half, dtype=torch.float64) / half)
    angles = positions.to(torch.float64)[:, None] * freqs[None]
    return torch.cat([angles.sin(), angles.cos()], dim=1)


class Attention(nn.Module):
    def __init__(self, width: int, heads: int):
        super().__init__()
        self.heads = heads
        self.qkv = nn.Linear(width, 3 * width)
        self.proj = nn.Linear(width, width)

    def forward(self, x: torch.Tensor, qk_bias: torch.Tensor | None = None) -> torch.Tensor:
        # x: (B, L, D); qk_bias is added to the query/key input only
        B, L, D = x.shape
        h = self.heads
        if qk_bias is None:
            q, k, v = self.qkv(x).chunk(3, dim=-1)
        else:
            wq, wk, wv = self.qkv.weight.chunk(3, dim=0)
            bq, bk, bv = self.qkv.bias.chunk(3, dim=0)
            xq = x + qk_bias
            q, k, v = F.linear(xq, wq, bq), F.linear(xq, wk, bk), F.linear(x, wv, bv)
        q, k, v = (t.reshape(B, L, h, D // h).transpose(1, 2) for t in (q, k, v))
        out = F.scaled_dot_product_attention(q, k, v)
        return self.proj(out.transpose(1, 2).reshape(B, L, D))


class Block(nn.Module):
    """Spatial attention within each frame, temporal attention across frames, MLP."""

    def __init__(self, width: int, heads: int, mlp_ratio: int):
        super().__init__()
        self.norm_s = nn.LayerNorm(width)
        self.attn_s = Attention(width, heads)
        self.norm_t = nn.LayerNorm(width)
        self.attn_t = Attention(width, heads)
        self.norm_m = nn.LayerNorm(width)
        self.mlp = nn.Sequential(nn.Linear(width, mlp_ratio * width), nn.GELU(),
                                 nn.Linear(mlp_ratio * width, width))

    def forward(self, x: torch.Tensor, frame_code: torch.Tensor, temporal: bool) -> torch.Tensor:
        # x: (n, L, D) tokens for one clip; frame_code: (n, D)
        x = x + self.attn_s(self.norm_s(x))
        if temporal:  # a single frame still passes through, as a one-frame video
            xt = x.transpose(0, 1)  # (L, n, D)
            x = x + self.attn_t(self.norm_t(xt), qk_bias=frame_code[None]).transpose(0, 1)
        return x + self.mlp(self.norm_m(x))


class Denoiser(nn.Module):
    """v-prediction transformer over patchified latent clips.

    The empty prompt is a single learned ``null_condition`` vector added to
    every token together with the timestep embedding.
    """

    def __init__(self, cfg: ModelConfig = ModelConfig()):
        super().__init__()
        self.cfg = cfg
        c, p, d = cfg.latent_channels, cfg.patch, cfg.width
        self.patch_in = nn.Linear(c * p * p, d)
        # depthwise conv over the token grid as a translation-equivariant position code
        self.pos_conv = nn.Conv2d(d, d, 3, padding=1, groups=d)
        self.null_condition = nn.Parameter(torch.zeros(d))
        self.register_buffer("timestep_table", sinusoidal(torch.arange(cfg.T + 1), d).float(),
                             persistent=False)
        self.time_mlp = nn.Sequential(nn.Linear(d, d), nn.SiLU(), nn.Linear(d, d))
        self.blocks = nn.ModuleList(Block(d, cfg.heads, cfg.mlp_ratio) for _ in range(cfg.depth))
        self.norm_out = nn.LayerNorm(d)
        self.patch_out = nn.Linear(d, c * p * p)
        # linear path from input patches straight to the output; the final norm
        # discards token scale, which a v-prediction proportional to z needs
        self.skip = nn.Linear(c * p * p, c * p * p, bias=False)
        nn.init.zeros_(self.skip.weight)
        # the transformer branch starts silent and only adds learned corrections
        nn.init.zeros_(self.patch_out.weight)
        nn.init.zeros_(self.patch_out.bias)
        nn.init.normal_(self.null_condition, std=0.02)
        self.temporal = cfg.temporal
        self.calls = 0

    def tokens_for(self, shape) -> int:
        n, _, h, w = shape
        p = self.cfg.patch
        return n * (h // p) * (w // p)

    def forward(self, z: torch.Tensor, t: int) -> torch.Tensor:
        """``z``: ``(n, c, h, w)`` latent clip -> v-prediction of the same shape."""
        cfg = self.cfg
        p = cfg.patch
        if z.ndim != 4 or z.shape[1] != cfg.latent_channels:
            raise ShapeError(f"expected (n, {cfg.latent_channels}, h, w) latent, got {tuple(z.shape)}")
        n, c, h, w = z.shape
        if h % p or w % p:
            raise ShapeError(f"latent size {h}x{w} not divisible by patch {p}")
        if self.tokens_for(z.shape) > cfg.max_tokens:
            raise CapacityError(f"{self.tokens_for(z.shape)} tokens exceed budget {cfg.max_tokens}")
        if not 0 <= t <= cfg.T:
            raise IndexError(f"timestep {t} outside [0, {cfg.T}]")
        self.calls += 1

        gh, gw = h // p, w // p
        tok = z.reshape(n, c, gh, p, gw, p).permute(0, 2, 4, 1, 3, 5).reshape(n, gh * gw, c * p * p)
        x = self.patch_in(tok)
        grid = x.transpose(1, 2).reshape(n, cfg.width, gh, gw)
        x = x + self.pos_conv(grid).reshape(n, cfg.width, gh * gw).transpose(1, 2)
        cond = self.null_condition + self.time_mlp(self.timestep_table[t].to(x.dtype))
        x = x + cond
        frame_code = sinusoidal(torch.arange(n), cfg.width).to(x.dtype)
        for blk in self.blocks:
            x = blk(x, frame_code, self.temporal)
        out = self.patch_out(self.norm_out(x)) + self.skip(tok)
        return out.reshape(n, gh, gw, c, p, p).permute(0, 3, 1, 4, 2, 5).reshape(n, c, h, w)


def denoiser_forward(den: Denoiser, z: torch.Tensor, t: int) -> torch.Tensor:
    return den(z, t)


# ---------------------------------------------------------------- checkpoint

MAGIC = b"DOVEckpt"
FORMAT_VERSION = 1


def save_checkpoint(path: str | os.PathLike, tensors: dict[str, torch.Tensor], *,
                    fingerprint: str, step: int = 0, meta: dict | None = None) -> None:
    """Write named tensors as little-endian f32 payloads behind a JSON manifest."""
    entries, payloads = [], []
    for name, value in tensors.items():
        arr = np.ascontiguousarray(value.detach().cpu().numpy() if torch.is_tensor(value) else value,
                                   dtype="<f4")
        entries.append({"name": name, "shape": list(arr.shape), "dtype": "f32le",
                        "nbytes": arr.nbytes})
        payloads.append(arr.tobytes())
    manifest = json.dumps({"tensors": entries, "step": int(step), "fingerprint": fingerprint,
                           "meta": meta or {}}, sort_keys=True).encode("utf-8")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IQ", FORMAT_VERSION, len(manifest)))
        fh.write(manifest)
        for blob in payloads:
            fh.write(blob)
    os.replace(tmp, path)


@dataclass
class Checkpoint:
    tensors: dict[str, torch.Tensor]
    fingerprint: str
    step: int
    meta: dict


def load_checkpoint(path: str | os.PathLike, expected_fingerprint: str | None = None) -> Checkpoint:
    data = Path(path).read_bytes()
    head = len(MAGIC) + 12
    if len(data) < head or data[:len(MAGIC)] != MAGIC:
        raise CorruptCheckpointError(f"{path}: bad magic or truncated header")
    version, mlen = struct.unpack("<IQ", data[len(MAGIC):head])
    if version != FORMAT_VERSION:
        raise IncompatibleCheckpointError(f"{path}: format version {version}, expected {FORMAT_VERSION}")
    if len(data) < head + mlen:
        raise CorruptCheckpointError(f"{path}: truncated manifest")
    try:
        manifest = json.loads(data[head:head + mlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptCheckpointError(f"{path}: unreadable manifest") from exc
    if expected_fingerprint is not None and manifest["fingerprint"] != expected_fingerprint:
        raise IncompatibleCheckpointError(
            f"{path}: fingerprint {manifest['fingerprint']} != expected {expected_fingerprint}")

    offset = head + mlen
    tensors = {}
    for entry in manifest["tensors"]:
        nbytes = entry["nbytes"]
        if int(np.prod(entry["shape"], dtype=np.int64)) * 4 != nbytes or offset + nbytes > len(data):
            raise CorruptCheckpointError(f"{path}: payload for {entry['name']} truncated or mis-sized")
        arr = np.frombuffer(data, dtype="<f4", count=nbytes // 4, offset=offset).reshape(entry["shape"])
        tensors[entry["name"]] = torch.from_numpy(arr.astype(np.float32))
        offset += nbytes
    if offset != len(data):
        raise CorruptCheckpointError(f"{path}: {len(data) - offset} trailing bytes")
    return Checkpoint(tensors, manifest["fingerprint"], manifest["step"], manifest["meta"])


def model_tensors(vae: TinyVAE, den: Denoiser) -> dict[str, torch.Tensor]:
    out = {f"vae.{k}": v for k, v in vae.state_dict().items()}
    out.update({f"denoiser.{k}": v for k, v in den.state_dict().items()})
    return out


def save_models(path, vae: TinyVAE, den: Denoiser, step: int = 0, extra: dict | None = None,
                meta: dict | None = None) -> None:
    tensors = model_tensors(vae, den)
    tensors.update(extra or {})
    full_meta = {"model": dataclasses.asdict(den.cfg)}
    full_meta.update(meta or {})
    save_checkpoint(path, tensors, fingerprint=den.cfg.fingerprint(), step=step, meta=full_meta)


def load_models(path, cfg: ModelConfig | None = None) -> tuple[TinyVAE, Denoiser, Checkpoint]:
    """Rebuild both models from a checkpoint.

    With ``cfg`` given, the checkpoint must have been written under the same
    model configuration.
    """
    ckpt = load_checkpoint(path, expected_fingerprint=cfg.fingerprint() if cfg else None)
    saved_cfg = ModelConfig(**ckpt.meta["model"])
    if saved_cfg.fingerprint() != ckpt.fingerprint:
        raise CorruptCheckpointError(f"{path}: manifest model config does not match fingerprint")
    vae, den = TinyVAE(saved_cfg), Denoiser(saved_cfg)
    for prefix, module in (("vae.", vae), ("denoiser.", den)):
        state = {k[len(prefix):]: v for k, v in ckpt.tensors.items() if k.startswith(prefix)}
        module.load_state_dict(state, strict=True)
    return vae, den, ckpt
