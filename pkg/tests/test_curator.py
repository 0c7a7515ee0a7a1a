import json
import sys
import textwrap

import numpy as np
import pytest

from dove.curator import (CurationConfig, ExternalScorer, MotionBBox, bbox_from_mask, crop_and_emit,
                          detect_scenes, filter_metadata, keep_segments, motion_bbox, run_pipeline,
                          score_quality, sharpness)
from dove.errors import DataError, ScorerError
from dove.media import VideoClip, write_clip
from dove.synthetic import make_clip, make_curation_corpus


def _meta(w, h, n):
    return {"width": w, "height": h, "frame_count": n}


def test_metadata_strict():
    cfg = CurationConfig()
    assert not filter_metadata(_meta(1280, 720, 60), cfg)[0]
    assert filter_metadata(_meta(1280, 721, 51), cfg)[0]
    assert not filter_metadata(_meta(1280, 721, 50), cfg)[0]
    assert filter_metadata(_meta(128, 96, 51), CurationConfig(min_short_side=64))[0]
    with pytest.raises(DataError):
        filter_metadata({"width": 3}, cfg)


def _concat(a_len, b_len):
    rng = np.random.default_rng(0)
    a = make_clip(rng, a_len, 24, 32, pan=(0.0, 0.5)).frames * 0.3
    b = 0.7 + 0.3 * make_clip(rng, b_len, 24, 32, pan=(0.0, 0.5)).frames
    return np.concatenate([a, b])


def test_static_one_segment():
    frames = np.repeat(np.random.default_rng(0).random((1, 3, 16, 16)), 120, axis=0)
    segs = detect_scenes(frames, CurationConfig())
    assert segs == [(0, 120)] and keep_segments(segs, CurationConfig()) == segs


def test_cut_both_dropped():
    segs = detect_scenes(_concat(30, 30), CurationConfig())
    assert segs == [(0, 30), (30, 60)]
    assert keep_segments(segs, CurationConfig()) == []


def test_cut_both_kept():
    segs = detect_scenes(_concat(60, 60), CurationConfig())
    assert keep_segments(segs, CurationConfig()) == [(0, 60), (60, 120)]


def test_single_frame_scene():
    assert detect_scenes(np.zeros((1, 3, 4, 4)), CurationConfig()) == [(0, 1)]


def test_quality_proxies():
    gray = np.full((2, 3, 16, 16), 0.5)
    assert sharpness(gray) == 0.0
    ok, scores, _ = score_quality(gray, ["sharpness"], CurationConfig(thresholds={"sharpness": 0.01}))
    assert not ok and scores["sharpness"] == 0.0
    checker = np.indices((16, 16)).sum(axis=0) % 2 * 1.0
    board = np.broadcast_to(checker, (2, 3, 16, 16))
    assert sharpness(board) > 0.5
    ok, _, _ = score_quality(board, ["sharpness", "contrast"], CurationConfig(thresholds={"sharpness": 0.5}))
    assert ok
    with pytest.raises(ValueError):
        score_quality(board, [], CurationConfig())


PLUGIN = textwrap.dedent("""
    import json, sys, time
    mode = sys.argv[1]
    for line in sys.stdin:
        req = json.loads(line)
        if mode == "slow":
            time.sleep(5)
        if mode == "garbage":
            print("not json", flush=True)
            continue
        print(json.dumps({"id": req["id"], "scores": {"ext": 1.0}}), flush=True)
""")


@pytest.fixture
def plugin(tmp_path):
    path = tmp_path / "plugin.py"
    path.write_text(PLUGIN)
    return lambda mode: [sys.executable, str(path), mode]


def test_plugin_ok(plugin, tmp_path):
    s = ExternalScorer(plugin("ok"), timeout=10)
    try:
        assert s.score(tmp_path) == {"ext": 1.0}
        assert s.score(tmp_path) == {"ext": 1.0}
        ok, scores, errors = score_quality(np.zeros((1, 3, 4, 4)), ["ext"], CurationConfig(
            thresholds={"ext": 1.0}), {"ext": s}, tmp_path)
        assert ok and scores == {"ext": 1.0} and not errors
    finally:
        s.close()


@pytest.mark.parametrize("mode", ["slow", "garbage"])
def test_plugin_failures_reject(plugin, tmp_path, mode):
    s = ExternalScorer(plugin(mode), timeout=0.5)
    try:
        with pytest.raises(ScorerError):
            s.score(tmp_path)
        ok, _, errors = score_quality(np.zeros((1, 3, 4, 4)), ["ext"], CurationConfig(), {"ext": s}, tmp_path)
        assert not ok and errors
    finally:
        s.close()


def test_bbox_examples():
    m = np.zeros((20, 20), bool)
    m[5, 7] = True
    assert bbox_from_mask(m, 2).as_tuple() == (3, 5, 7, 9)
    m[9, 3] = True
    assert bbox_from_mask(m, 1).as_tuple() == (4, 2, 10, 8)
    assert motion_bbox([np.zeros((2, 8, 8))], CurationConfig(tau=0.5)) is None


def _brute_bbox(mask, p):
    h, w = mask.shape
    pts = [(i, j) for i in range(h) for j in range(w) if mask[i, j]]
    if not pts:
        return None
    i0 = min(i for i, _ in pts) - p
    j0 = min(j for _, j in pts) - p
    i1 = max(i for i, _ in pts) + p
    j1 = max(j for _, j in pts) + p
    return (max(i0, 0), max(j0, 0), min(i1, h - 1), min(j1, w - 1))


def test_bbox_brute_force(rng):
    for k in range(100):
        h, w = rng.integers(1, 30, size=2)
        mask = rng.random((h, w)) < rng.uniform(0.0, 0.05)
        p = int(rng.integers(0, 6))
        box = bbox_from_mask(mask, p)
        got = box.as_tuple() if box else None
        assert got == _brute_bbox(mask, p)
        if box:
            assert 0 <= box.i_min <= box.i_max < h and 0 <= box.j_min <= box.j_max < w


def test_crop_boundary():
    frames = np.zeros((2, 3, 100, 100))
    cfg = CurationConfig(min_crop_short_side=50)
    crop, _ = crop_and_emit(frames, MotionBBox(0, 0, 48, 99), cfg)  # short side 49
    assert crop is None
    crop, why = crop_and_emit(frames, MotionBBox(0, 0, 49, 99), cfg)
    assert crop.shape == (2, 3, 50, 100) and why == "ok"
    full, _ = crop_and_emit(frames, MotionBBox(0, 0, 99, 99), cfg)
    assert full.shape == frames.shape
    assert crop_and_emit(frames, MotionBBox(5, 0, 2, 10), cfg)[0] is None


DESK = CurationConfig(min_short_side=64, min_frames=16, min_crop_short_side=48, tau=0.3, padding=8)


def test_pipeline_labeled_corpus(tmp_path):
    expected = make_curation_corpus(tmp_path / "raw", seed=0, per_label=2)
    man = run_pipeline(tmp_path / "raw", tmp_path / "out", DESK)
    got = {r["input"]: r["status"] == "accepted" for r in man.records}
    assert got == expected
    assert len(man.records) == len(expected)


def test_pipeline_jobs_and_errors(tmp_path):
    make_curation_corpus(tmp_path / "raw", seed=1, per_label=1)
    (tmp_path / "raw" / "broken").mkdir()
    (tmp_path / "raw" / "broken" / "meta.json").write_text(json.dumps(_meta(96, 72, 30) | {"fps": 25}))
    a = run_pipeline(tmp_path / "raw", tmp_path / "a", DESK)
    b = run_pipeline(tmp_path / "raw", tmp_path / "b", CurationConfig(**{**DESK.__dict__, "jobs": 3}))
    assert a.to_json() == b.to_json()
    broken = [r for r in a.records if r["input"] == "broken"][0]
    assert broken["status"] == "error"
