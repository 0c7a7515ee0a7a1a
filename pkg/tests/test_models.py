import dataclasses
import struct

import numpy as np
import pytest
import torch

from dove.errors import CapacityError, CorruptCheckpointError, IncompatibleCheckpointError, ShapeError
from dove.models import (MAGIC, Denoiser, ModelConfig, TinyVAE, decode_clip, decode_frame,
                         denoiser_forward, encode_clip, encode_frame, load_checkpoint, load_models,
                         model_tensors, save_checkpoint, save_models)


def test_encode_decode_shapes(rng):
    vae = TinyVAE(ModelConfig())
    z = encode_frame(vae, rng.random((3, 64, 64)))
    assert z.shape == (1, 8, 16, 16)
    assert decode_frame(vae, z).shape == (3, 64, 64)
    with torch.no_grad():
        assert torch.equal(encode_frame(vae, rng.random((3, 64, 64)) * 0 + 0.5),
                           encode_frame(vae, np.full((3, 64, 64), 0.5)))


def test_decode_clamped_and_deterministic(small_cfg):
    vae = TinyVAE(small_cfg)
    z = torch.randn(1, 8, 4, 4) * 10
    a, b = decode_frame(vae, z), decode_frame(vae, z)
    assert torch.equal(a, b)
    assert a.min() >= 0 and a.max() <= 1


def test_shape_errors(small_cfg):
    vae = TinyVAE(small_cfg)
    with pytest.raises(ShapeError):
        encode_frame(vae, np.zeros((3, 10, 16)))
    with pytest.raises(ShapeError):
        decode_frame(vae, torch.zeros(1, 5, 4, 4))


def test_framewise_equals_batch(small_cfg, rng):
    vae = TinyVAE(small_cfg).double()
    x = torch.tensor(rng.random((5, 3, 16, 24)))
    with torch.no_grad():
        per_frame = encode_clip(vae, x)
        batched = vae.encode(x)
        assert torch.allclose(per_frame, batched, atol=1e-6)
        assert torch.allclose(decode_clip(vae, batched), vae.decode(batched), atol=1e-6)


def test_call_counters(small_cfg):
    vae = TinyVAE(small_cfg)
    encode_clip(vae, torch.zeros(3, 3, 8, 8))
    decode_clip(vae, torch.zeros(3, 8, 2, 2))
    assert (vae.encode_calls, vae.decode_calls) == (3, 3)


def test_denoiser_shape_and_determinism():
    den = Denoiser(ModelConfig()).eval()
    z = torch.randn(5, 8, 8, 16)
    with torch.no_grad():
        a = denoiser_forward(den, z, 399)
        b = denoiser_forward(den, z, 399)
    assert a.shape == z.shape and torch.equal(a, b)


@pytest.mark.parametrize("fill", ["zeros", "ones", "randn"])
def test_denoiser_finite(small_cfg, fill):
    den = Denoiser(small_cfg)
    z = getattr(torch, fill)(2, 8, 4, 4)
    assert torch.isfinite(den(z, 399)).all()


def test_token_budget():
    den = Denoiser(ModelConfig(width=32, heads=2, depth=1, max_tokens=16))
    den(torch.zeros(1, 8, 8, 8), 1)
    with pytest.raises(CapacityError):
        den(torch.zeros(2, 8, 8, 8), 1)


def test_denoiser_gradient_fd(small_cfg):
    torch.manual_seed(3)
    den = Denoiser(small_cfg).double()
    with torch.no_grad():
        for p in (den.patch_out.weight, den.skip.weight):
            p.normal_(0.0, 0.1)
    z = torch.randn(2, 8, 4, 4, dtype=torch.float64)
    target = torch.randn_like(z)

    def loss():
        return ((den(z, 399) - target) ** 2).mean()

    for name in ("patch_in.weight", "blocks.0.attn_t.qkv.weight", "null_condition"):
        p = dict(den.named_parameters())[name]
        (g,) = torch.autograd.grad(loss(), [p])
        idx = tuple(int(i) for i in np.unravel_index(int(g.abs().argmax()), p.shape))
        h = 1e-6
        with torch.no_grad():
            p[idx] += h
            up = float(loss())
            p[idx] -= 2 * h
            down = float(loss())
            p[idx] += h
        fd = (up - down) / (2 * h)
        assert abs(float(g[idx])) > 0, name
        assert abs(fd - float(g[idx])) <= 1e-3 * max(abs(fd), 1e-12), name


def test_fresh_denoiser_predicts_zero(small_cfg):
    z = torch.randn(3, 8, 4, 4)
    assert torch.equal(Denoiser(small_cfg)(z, 399), torch.zeros_like(z))


def test_single_frame_uses_temporal_attention(small_cfg):
    den = Denoiser(small_cfg)
    with torch.no_grad():
        den.patch_out.weight.normal_(0.0, 0.1)
    out = den(torch.randn(1, 8, 4, 4), 399)
    (g,) = torch.autograd.grad(out.square().sum(), [den.blocks[0].attn_t.proj.weight])
    assert g.abs().sum() > 0


def test_checkpoint_roundtrip(tmp_path, small_cfg):
    vae, den = TinyVAE(small_cfg), Denoiser(small_cfg)
    save_models(tmp_path / "m.ckpt", vae, den, step=7)
    vae2, den2, ckpt = load_models(tmp_path / "m.ckpt", small_cfg)
    assert ckpt.step == 7
    assert set(ckpt.tensors) == set(model_tensors(vae, den))
    for a, b in zip(list(vae.state_dict().values()) + list(den.state_dict().values()),
                    list(vae2.state_dict().values()) + list(den2.state_dict().values())):
        assert torch.equal(a, b)


def test_random_tensor_bit_equality(tmp_path, rng):
    tensors = {f"t{i}": torch.tensor(rng.standard_normal((i + 1, 3)), dtype=torch.float32) for i in range(4)}
    save_checkpoint(tmp_path / "x", tensors, fingerprint="abc")
    back = load_checkpoint(tmp_path / "x", expected_fingerprint="abc")
    assert list(back.tensors) == list(tensors)
    for k in tensors:
        assert torch.equal(back.tensors[k], tensors[k])


def test_layout(tmp_path):
    save_checkpoint(tmp_path / "x", {"a": torch.ones(2)}, fingerprint="f")
    data = (tmp_path / "x").read_bytes()
    assert data[:8] == MAGIC
    version, mlen = struct.unpack("<IQ", data[8:20])
    assert version == 1
    assert data[20 + mlen:] == np.ones(2, dtype="<f4").tobytes()


def test_mismatched_channels(tmp_path, small_cfg):
    save_models(tmp_path / "m", TinyVAE(small_cfg), Denoiser(small_cfg))
    other = dataclasses.replace(small_cfg, latent_channels=4)
    with pytest.raises(IncompatibleCheckpointError):
        load_models(tmp_path / "m", other)


def test_truncated(tmp_path, small_cfg):
    save_models(tmp_path / "m", TinyVAE(small_cfg), Denoiser(small_cfg))
    data = (tmp_path / "m").read_bytes()
    for cut in (4, 30, len(data) - 3):
        (tmp_path / "t").write_bytes(data[:cut])
        with pytest.raises(CorruptCheckpointError):
            load_checkpoint(tmp_path / "t")
    (tmp_path / "t").write_bytes(data + b"\0")
    with pytest.raises(CorruptCheckpointError):
        load_checkpoint(tmp_path / "t")
