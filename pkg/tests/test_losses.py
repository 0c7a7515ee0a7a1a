import numpy as np
import pytest
import torch

from dove.errors import ShapeError
from dove.losses import (LossWeights, PerceptualExtractor, dists_like, frame_diff_loss, mse, stage1_loss,
                         stage2_image_loss, stage2_video_loss, video_loss_terms)


@pytest.fixture(scope="module")
def ext():
    return PerceptualExtractor(0).double()


def test_mse_cases(rng):
    a = rng.random((2, 3, 4))
    assert float(mse(a, a)) == 0.0
    assert float(mse(np.array(2.0), np.array(0.0))) == 4.0
    b = rng.random((2, 3, 4))
    brute = sum((x - y) ** 2 for x, y in zip(a.ravel(), b.ravel())) / a.size
    assert abs(float(stage1_loss(a, b)) - brute) < 1e-12
    with pytest.raises(ShapeError):
        mse(a, b[:1])


def test_extractor_frozen_and_seeded():
    a, b, c = PerceptualExtractor(0), PerceptualExtractor(0), PerceptualExtractor(1)
    assert all(not p.requires_grad for p in a.parameters())
    assert all(torch.equal(p, q) for p, q in zip(a.parameters(), b.parameters()))
    assert not torch.equal(a.weights[0], c.weights[0])
    assert a.n_scales == 3


def test_dists_identity_symmetry_positive(ext, rng):
    x, y = rng.random((3, 16, 16)), rng.random((3, 16, 16))
    assert abs(float(dists_like(x, x, ext))) < 1e-7
    assert abs(float(dists_like(x, y, ext)) - float(dists_like(y, x, ext))) < 1e-7
    d = float(dists_like(x, y, ext))
    assert 0.0 < d <= 1.0


def test_dists_differentiable(ext, rng):
    x = torch.tensor(rng.random((3, 16, 16)), requires_grad=True)
    dists_like(x, torch.tensor(rng.random((3, 16, 16))), ext).backward()
    assert x.grad.abs().sum() > 0


def test_frame_diff_hand_case():
    sr = np.array([0.0, 1.0, 0.0]).reshape(3, 1, 1, 1)
    hr = np.array([0.0, 0.5, 1.0]).reshape(3, 1, 1, 1)
    assert float(frame_diff_loss(sr, hr)) == 1.0


def test_frame_diff_properties(rng):
    x = rng.random((4, 3, 5, 5))
    assert float(frame_diff_loss(x, x)) == 0.0
    assert float(frame_diff_loss(np.full((3, 3, 2, 2), 0.2), np.full((3, 3, 2, 2), 0.9))) == 0.0
    y = rng.random((4, 3, 5, 5))
    assert abs(float(frame_diff_loss(x + 0.3, y + 0.3)) - float(frame_diff_loss(x, y))) < 1e-12
    with pytest.raises(ValueError):
        frame_diff_loss(x[:1], y[:1])


def test_image_loss_composition(ext, rng):
    x, y = rng.random((3, 16, 16)), rng.random((3, 16, 16))
    assert float(stage2_image_loss(x, x, LossWeights(), ext)) == pytest.approx(0.0, abs=1e-7)
    assert float(stage2_image_loss(x, y, LossWeights(0.0, 1.0), ext)) == float(mse(x, y))
    total = float(stage2_image_loss(x, y, LossWeights(), ext))
    assert abs(total - (float(mse(x, y)) + float(dists_like(x, y, ext)))) < 1e-9


def test_video_loss_composition(ext, rng):
    x, y = rng.random((3, 3, 16, 16)), rng.random((3, 3, 16, 16))
    assert float(stage2_video_loss(x, x, LossWeights(), ext)) == pytest.approx(0.0, abs=1e-7)
    assert float(stage2_video_loss(x, y, LossWeights(0.0, 0.0), ext)) == float(mse(x, y))
    per_frame = np.mean([float(dists_like(x[i], y[i], ext)) for i in range(3)])
    expected = float(mse(x, y)) + per_frame + float(frame_diff_loss(x, y))
    assert abs(float(stage2_video_loss(x, y, LossWeights(), ext)) - expected) < 1e-9
    assert set(video_loss_terms(x, y, ext)) == {"mse", "dists", "frame"}
    with pytest.raises(ValueError):
        stage2_video_loss(x[:1], y[:1], LossWeights(), ext)


def test_weights_validation():
    with pytest.raises(ValueError):
        LossWeights(-1.0, 1.0)
