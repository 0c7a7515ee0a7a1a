import json

import numpy as np
import pytest

from dove.degradation import (Blur, DegradationConfig, DegradationRecipe, StageRanges, apply_degradation,
                              blur_frames, compress_blocks, gaussian_kernel, make_recipe, quant_table)
from dove.errors import ShapeError
from dove.media import ImageSample, VideoClip, resize_bicubic
from dove.synthetic import make_clip


def test_recipe_deterministic_and_serializable():
    cfg = DegradationConfig()
    a, b = make_recipe(cfg, 17), make_recipe(cfg, 17)
    assert a == b
    back = DegradationRecipe.from_dict(json.loads(a.to_json()))
    assert back == a


def test_seeds_differ():
    cfg = DegradationConfig()
    sigmas = {make_recipe(cfg, s).stages[0].blur.sigma_x for s in range(20)}
    assert len(sigmas) == 20


@pytest.mark.parametrize("bad", [
    dict(first=StageRanges(sigma=(2.0, 1.0))),
    dict(first=StageRanges(quality=(0.0, 50.0))),
    dict(second=StageRanges(resize=(0.0, 1.0))),
    dict(first=StageRanges(blur_prob=1.5)),
    dict(scale=0),
])
def test_invalid_ranges(bad):
    with pytest.raises(ValueError):
        make_recipe(DegradationConfig(**bad), 0)


def test_identity_recipe(rng):
    x = rng.random((3, 3, 40, 40))
    out = apply_degradation(VideoClip(x), DegradationRecipe.identity())
    ref = np.stack([resize_bicubic(f, 10, 10) for f in x])
    np.testing.assert_allclose(out.frames, ref, atol=1e-6)


def test_shapes_and_range():
    clip = make_clip(np.random.default_rng(0), 3, 160, 160)
    out = apply_degradation(clip, make_recipe(DegradationConfig(), 3))
    assert out.frames.shape == (3, 3, 40, 40)
    assert out.frames.min() >= 0 and out.frames.max() <= 1
    img = apply_degradation(ImageSample(clip.frames[0]), make_recipe(DegradationConfig(), 3))
    assert img.pixels.shape == (3, 40, 40)


def test_bit_identical_runs():
    clip = make_clip(np.random.default_rng(1), 2, 64, 64)
    r = make_recipe(DegradationConfig(), 9)
    assert np.array_equal(apply_degradation(clip, r).frames, apply_degradation(clip, r).frames)


def test_divisibility(rng):
    with pytest.raises(ShapeError):
        apply_degradation(VideoClip(rng.random((1, 3, 30, 32))), DegradationRecipe.identity())


def test_blur_preserves_mean(rng):
    frame = np.pad(rng.random((3, 32, 32)), ((0, 0), (12, 12), (12, 12)), constant_values=0.5)
    for blur in (Blur(1.5, 1.5, 0.0, 11), Blur(2.0, 0.7, 0.9, 13)):
        k = gaussian_kernel(blur)
        assert abs(k.sum() - 1.0) < 1e-12
        assert abs(blur_frames(frame, k).mean() - frame.mean()) < 1e-3


def test_quant_table_scaling():
    base = np.full((8, 8), 16.0)
    assert np.all(quant_table(base, 100) == 1.0)
    assert np.all(quant_table(base, 50) == 16.0)
    assert np.all(quant_table(base, 10) == 80.0)


def test_compression_quality_100_near_identity():
    clip = make_clip(np.random.default_rng(2), 2, 40, 48).frames
    err = np.abs(compress_blocks(clip, 100) - clip)
    # rounding every coefficient to an integer step is the codec floor
    assert err.mean() <= 1 / 255
    assert np.sqrt((err**2).mean()) <= 1 / 255


def test_compression_monotone_in_quality():
    clip = make_clip(np.random.default_rng(3), 1, 32, 32).frames
    errs = [np.abs(compress_blocks(clip, q) - clip).mean() for q in (95, 60, 20)]
    assert errs[0] < errs[1] < errs[2]


def test_config_from_dict():
    cfg = DegradationConfig.from_dict({"first": {"sigma": [0.5, 1.0]}, "scale": 2})
    assert cfg.first.sigma == (0.5, 1.0) and cfg.scale == 2
    assert cfg.second == DegradationConfig().second
