import json

import numpy as np
import pytest
import torch
import torch.nn.functional as F
from hypothesis import given, settings, strategies as st

from dove.errors import ClipLoadError, ShapeError
from dove.media import (ImageSample, VideoClip, list_frames, read_clip, read_meta, resize_bicubic,
                        resize_bilinear, rgb_to_luma, upscale_clip, write_clip)


def test_clip_validation():
    with pytest.raises(ShapeError):
        VideoClip(np.zeros((2, 1, 4, 4)))
    with pytest.raises(ValueError):
        VideoClip(np.full((1, 3, 4, 4), 1.5))
    with pytest.raises(ValueError):
        VideoClip(np.zeros((1, 3, 4, 4)), fps=0)
    clip = VideoClip(np.zeros((3, 3, 4, 5)))
    assert (clip.n, clip.height, clip.width) == (3, 4, 5)
    assert clip.deltas().shape == (2, 3, 4, 5)


def test_eight_identical_frames(tmp_path, rng):
    frame = rng.random((3, 16, 16))
    write_clip(VideoClip(np.repeat(frame[None], 8, axis=0)), tmp_path / "c")
    clip = read_clip(tmp_path / "c")
    assert clip.frames.shape == (8, 3, 16, 16)


def test_single_frame_meta(tmp_path):
    write_clip(ImageSample(np.full((3, 6, 7), 0.25)).as_clip(fps=30.0), tmp_path / "one")
    meta = read_meta(tmp_path / "one")
    assert meta == {"fps": 30.0, "width": 7, "height": 6, "frame_count": 1, "colorspace": "rgb8"}
    assert [p.name for p in list_frames(tmp_path / "one")] == ["000001.png"]


def test_refuse_overwrite(tmp_path):
    clip = VideoClip(np.zeros((1, 3, 4, 4)))
    write_clip(clip, tmp_path / "c")
    with pytest.raises(FileExistsError):
        write_clip(clip, tmp_path / "c")
    write_clip(VideoClip(np.ones((2, 3, 4, 4))), tmp_path / "c", force=True)
    assert read_clip(tmp_path / "c").n == 2


def test_numbering_gap(tmp_path):
    write_clip(VideoClip(np.zeros((3, 3, 4, 4))), tmp_path / "c")
    (tmp_path / "c" / "000002.png").unlink()
    with pytest.raises(ClipLoadError, match="gap"):
        read_clip(tmp_path / "c")


def test_missing_meta(tmp_path):
    write_clip(VideoClip(np.zeros((1, 3, 4, 4))), tmp_path / "c")
    (tmp_path / "c" / "meta.json").unlink()
    with pytest.raises(ClipLoadError):
        read_clip(tmp_path / "c")


def test_meta_frame_count_mismatch(tmp_path):
    write_clip(VideoClip(np.zeros((2, 3, 4, 4))), tmp_path / "c")
    meta = json.loads((tmp_path / "c" / "meta.json").read_text())
    meta["frame_count"] = 3
    (tmp_path / "c" / "meta.json").write_text(json.dumps(meta))
    with pytest.raises(ClipLoadError):
        read_clip(tmp_path / "c")


@settings(max_examples=15, deadline=None)
@given(n=st.integers(1, 3), h=st.integers(1, 9), w=st.integers(1, 9), seed=st.integers(0, 2**31))
def test_roundtrip_property(tmp_path_factory, n, h, w, seed):
    frames = np.random.default_rng(seed).random((n, 3, h, w))
    d = tmp_path_factory.mktemp("rt") / "c"
    write_clip(VideoClip(frames), d)
    back = read_clip(d)
    assert back.frames.shape == frames.shape
    assert np.abs(back.frames - frames).max() <= 1 / 255 + 1e-12


def test_bilinear_hand_case():
    frame = np.broadcast_to(np.array([[0.0, 1.0], [0.0, 1.0]]), (3, 2, 2))
    out = resize_bilinear(frame, 2, 4)
    # half-pixel centers: output x = (j + 0.5) / 2 - 0.5 -> -0.25, 0.25, 0.75, 1.25, clamped at the edges
    np.testing.assert_allclose(out[0, 0], [0.0, 0.25, 0.75, 1.0], atol=1e-12)
    np.testing.assert_allclose(out[0, 1], out[0, 0])


def test_bilinear_matches_torch(rng):
    frame = rng.random((3, 10, 7))
    ref = F.interpolate(torch.tensor(frame)[None], size=(40, 28), mode="bilinear",
                        align_corners=False)[0].numpy()
    np.testing.assert_allclose(resize_bilinear(frame, 40, 28), ref, atol=1e-12)


@pytest.mark.parametrize("size", [(1, 1), (7, 3), (160, 160)])
def test_constant_preserved(size):
    for fn in (resize_bilinear, resize_bicubic):
        np.testing.assert_allclose(fn(np.full((3, 40, 40), 0.5), *size), 0.5, atol=1e-12)


def test_same_size_identity(rng):
    frame = rng.random((3, 9, 11))
    np.testing.assert_allclose(resize_bilinear(frame, 9, 11), frame, atol=1e-6)
    np.testing.assert_allclose(resize_bicubic(frame, 9, 11), frame, atol=1e-6)


def test_resize_errors():
    with pytest.raises(ValueError):
        resize_bilinear(np.zeros((3, 4, 4)), 0, 4)


def test_upscale_x4(rng):
    clip = VideoClip(rng.random((2, 3, 40, 40)))
    assert upscale_clip(clip, 4).frames.shape == (2, 3, 160, 160)


def test_luma_weights():
    np.testing.assert_allclose(rgb_to_luma(np.ones((3, 2, 2))), 1.0)
    assert rgb_to_luma(np.zeros((4, 3, 5, 6))).shape == (4, 5, 6)
