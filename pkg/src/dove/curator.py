"""Four-step curation of a raw clip corpus into super-resolution training data.

1. metadata filter (short side and frame count),
2. scene segmentation, dropping short segments,
3. quality scoring against per-scorer thresholds,
4. motion-area detection from optical flow and cropping to the padded box.

Every input clip gets exactly one manifest record, in corpus order.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import os
import selectors
import shutil
import subprocess
import tempfile
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .errors import ClipLoadError, DataError, ScorerError
from .flow import compute_flow, magnitude
from .media import VideoClip, list_clips, read_clip, read_meta, resize_bilinear, rgb_to_luma, write_clip

log = logging.getLogger(__name__)

BUILTIN_SCORERS = ("sharpness", "contrast", "colorfulness")


@dataclass(frozen=True)
class CurationConfig:
    min_short_side: int = 720
    min_frames: int = 50
    scene_threshold: float = 0.1
    scene_size: int = 32
    scorers: tuple[str, ...] = BUILTIN_SCORERS
    thresholds: dict = field(default_factory=dict)
    plugins: dict = field(default_factory=dict)  # scorer name -> argv list
    plugin_timeout: float = 60.0
    tau: float = 1.0
    padding: int = 16
    min_crop_short_side: int = 720
    flow_stride: int = 1
    jobs: int = 1

    def __post_init__(self):
        for key in ("min_short_side", "min_frames", "scene_threshold", "tau", "padding",
                    "min_crop_short_side"):
            if getattr(self, key) < 0:
                raise ValueError(f"{key} must be non-negative")
        if self.min_frames < 2:
            raise ValueError("min_frames must be >= 2")
        if any(v < 0 for v in self.thresholds.values()):
            raise ValueError("quality thresholds must be non-negative")
        if self.flow_stride < 1 or self.jobs < 1:
            raise ValueError("flow_stride and jobs must be >= 1")


# ------------------------------------------------------------ step 1: metadata


def filter_metadata(meta: dict, cfg: CurationConfig) -> tuple[bool, str]:
    try:
        h, w, n = int(meta["height"]), int(meta["width"]), int(meta["frame_count"])
    except KeyError as exc:
        raise DataError(f"metadata lacks {exc.args[0]!r}") from exc
    if min(h, w) <= cfg.min_short_side:
        return False, f"short side {min(h, w)} <= {cfg.min_short_side}"
    if n <= cfg.min_frames:
        return False, f"{n} frames <= {cfg.min_frames}"
    return True, "ok"


# --------------------------------------------------------------- step 2: scenes


def scene_scores(frames: np.ndarray, size: int = 32) -> np.ndarray:
    """Mean absolute luma change between consecutive frames, each shrunk to ``size`` px on its long side."""
    luma = rgb_to_luma(frames)
    h, w = luma.shape[-2:]
    k = size / max(h, w)
    small = resize_bilinear(luma[:, None], max(1, round(h * k)), max(1, round(w * k)))[:, 0] \
        if k < 1 else luma
    return np.abs(np.diff(small, axis=0)).mean(axis=(1, 2))


def detect_scenes(frames: np.ndarray, cfg: CurationConfig) -> list[tuple[int, int]]:
    """Half-open ``(start, end)`` segments partitioning the clip."""
    n = len(frames)
    if n < 2:
        return [(0, n)]
    cuts = [i + 1 for i, s in enumerate(scene_scores(frames, cfg.scene_size)) if s > cfg.scene_threshold]
    bounds = [0] + cuts + [n]
    return list(zip(bounds[:-1], bounds[1:]))


def keep_segments(segments: Sequence[tuple[int, int]], cfg: CurationConfig) -> list[tuple[int, int]]:
    return [(a, b) for a, b in segments if b - a >= cfg.min_frames]


# -------------------------------------------------------------- step 3: quality


def sharpness(frames: np.ndarray) -> float:
    """Laplacian variance of luma, squashed to [0, 1) as ``v / (v + 1e-3)``."""
    luma = rgb_to_luma(frames)
    lap = (-4 * luma[..., 1:-1, 1:-1] + luma[..., :-2, 1:-1] + luma[..., 2:, 1:-1]
           + luma[..., 1:-1, :-2] + luma[..., 1:-1, 2:])
    if lap.size == 0:
        return 0.0
    v = float(np.mean(lap.reshape(len(lap), -1).var(axis=1)))
    return v / (v + 1e-3)


def contrast(frames: np.ndarray) -> float:
    """RMS luma contrast, doubled so a full-range binary image scores 1."""
    luma = rgb_to_luma(frames)
    return float(min(1.0, 2.0 * np.mean(luma.reshape(len(luma), -1).std(axis=1))))


def colorfulness(frames: np.ndarray) -> float:
    """Hasler-Suesstrunk colorfulness on [0, 1] pixels, clipped to 1."""
    r, g, b = frames[:, 0], frames[:, 1], frames[:, 2]
    rg, yb = r - g, 0.5 * (r + g) - b
    per = [np.hypot(a.std(), c.std()) + 0.3 * np.hypot(a.mean(), c.mean()) for a, c in zip(rg, yb)]
    return float(min(1.0, np.mean(per)))


_PROXIES: dict[str, Callable[[np.ndarray], float]] = {
    "sharpness": sharpness, "contrast": contrast, "colorfulness": colorfulness}


class ExternalScorer:
    """A scorer plugin running as one long-lived child process.

    Requests and responses are single JSON lines on stdin/stdout:
    ``{"id": ..., "clip_path": ...}`` -> ``{"id": ..., "scores": {name: value}}``.
    Calls are serialized; a timeout or protocol violation kills the child,
    which is restarted on the next request.
    """

    def __init__(self, argv: Sequence[str], timeout: float = 60.0):
        self.argv = list(argv)
        self.timeout = timeout
        self._proc: subprocess.Popen | None = None
        self._lock = threading.Lock()
        self._next_id = 0

    def _start(self) -> subprocess.Popen:
        if self._proc is None or self._proc.poll() is not None:
            self._proc = subprocess.Popen(self.argv, stdin=subprocess.PIPE, stdout=subprocess.PIPE,
                                          stderr=subprocess.DEVNULL, text=True, bufsize=1)
        return self._proc

    def close(self) -> None:
        if self._proc is not None:
            if self._proc.poll() is None:
                self._proc.kill()
            self._proc.wait()
            for pipe in (self._proc.stdin, self._proc.stdout):
                if pipe:
                    pipe.close()
            self._proc = None

    def score(self, clip_path: str | os.PathLike) -> dict[str, float]:
        with self._lock:
            self._next_id += 1
            req_id = self._next_id
            proc = self._start()
            try:
                proc.stdin.write(json.dumps({"id": req_id, "clip_path": str(clip_path)}) + "\n")
                proc.stdin.flush()
            except (BrokenPipeError, OSError) as exc:
                self.close()
                raise ScorerError(f"{self.argv[0]}: cannot send request: {exc}") from exc
            sel = selectors.DefaultSelector()
            sel.register(proc.stdout, selectors.EVENT_READ)
            ready = sel.select(self.timeout)
            sel.close()
            if not ready:
                self.close()
                raise ScorerError(f"{self.argv[0]}: no response within {self.timeout}s")
            line = proc.stdout.readline()
            try:
                resp = json.loads(line)
                if resp["id"] != req_id:
                    raise ValueError(f"response id {resp['id']} != {req_id}")
                scores = {str(k): float(v) for k, v in resp["scores"].items()}
            except (ValueError, KeyError, TypeError, AttributeError) as exc:
                self.close()
                raise ScorerError(f"{self.argv[0]}: bad response {line!r}: {exc}") from exc
            bad = {k: v for k, v in scores.items() if not 0.0 <= v <= 1.0}
            if bad:
                raise ScorerError(f"{self.argv[0]}: scores outside [0, 1]: {bad}")
            return scores


def score_quality(frames: np.ndarray, scorers: Sequence[str], cfg: CurationConfig,
                  plugins: dict[str, ExternalScorer] | None = None,
                  clip_path: str | os.PathLike | None = None) -> tuple[bool, dict[str, float], list[str]]:
    """Score with built-in proxies and plugins; accept iff every score meets its threshold.

    Returns ``(accepted, scores, errors)``. Any scorer error rejects the clip.
    """
    if not scorers:
        raise ValueError("at least one scorer is required")
    plugins = plugins or {}
    scores, errors = {}, []
    for name in scorers:
        if name in _PROXIES:
            scores[name] = _PROXIES[name](frames)
        elif name in plugins:
            if clip_path is None:
                errors.append(f"{name}: no clip path for external scorer")
                continue
            try:
                got = plugins[name].score(clip_path)
            except ScorerError as exc:
                errors.append(str(exc))
                continue
            if name not in got:
                errors.append(f"{name}: response lacks its own score")
                continue
            scores[name] = got[name]
        else:
            errors.append(f"{name}: unknown scorer")
    accepted = not errors and all(scores[k] >= cfg.thresholds.get(k, 0.0) for k in scores)
    return accepted, scores, errors


# --------------------------------------------------------------- step 4: motion


@dataclass(frozen=True)
class MotionBBox:
    """Inclusive pixel box ``(i_min, j_min, i_max, j_max)``; ``i`` is the row."""

    i_min: int
    j_min: int
    i_max: int
    j_max: int

    def as_tuple(self) -> tuple[int, int, int, int]:
        return (self.i_min, self.j_min, self.i_max, self.j_max)

    @property
    def height(self) -> int:
        return self.i_max - self.i_min + 1

    @property
    def width(self) -> int:
        return self.j_max - self.j_min + 1


def motion_map(flows: Sequence[np.ndarray]) -> np.ndarray:
    """Per-pixel flow magnitude, maximized over all frame pairs."""
    if len(flows) == 0:
        raise ValueError("need at least one flow field")
    return np.max([magnitude(f) for f in flows], axis=0)


def bbox_from_mask(mask: np.ndarray, padding: int, clamp: bool = True) -> MotionBBox | None:
    rows = np.flatnonzero(mask.any(axis=1))
    if rows.size == 0:
        return None
    cols = np.flatnonzero(mask.any(axis=0))
    box = [rows[0] - padding, cols[0] - padding, rows[-1] + padding, cols[-1] + padding]
    if clamp:
        h, w = mask.shape
        box = [max(box[0], 0), max(box[1], 0), min(box[2], h - 1), min(box[3], w - 1)]
    return MotionBBox(*(int(b) for b in box))


def motion_bbox(flows: Sequence[np.ndarray], cfg: CurationConfig) -> MotionBBox | None:
    """Padded box around pixels whose peak flow magnitude exceeds ``tau``; None if static."""
    return bbox_from_mask(motion_map(flows) > cfg.tau, cfg.padding)


def clip_flows(frames: np.ndarray, stride: int = 1) -> list[np.ndarray]:
    return [compute_flow(frames[i], frames[i + 1]) for i in range(0, len(frames) - 1, stride)]


def crop_and_emit(frames: np.ndarray, bbox: MotionBBox | None,
                  cfg: CurationConfig) -> tuple[np.ndarray | None, str]:
    if bbox is None:
        return None, "no motion"
    h, w = frames.shape[-2:]
    if not (0 <= bbox.i_min <= bbox.i_max < h and 0 <= bbox.j_min <= bbox.j_max < w):
        return None, f"degenerate box {bbox.as_tuple()} for {h}x{w} frames"
    short = min(bbox.height, bbox.width)
    if short < cfg.min_crop_short_side:
        return None, f"crop short side {short} < {cfg.min_crop_short_side}"
    return frames[..., bbox.i_min:bbox.i_max + 1, bbox.j_min:bbox.j_max + 1], "ok"


# --------------------------------------------------------------------- pipeline


@dataclass
class CurationManifest:
    records: list[dict] = field(default_factory=list)
    config: dict = field(default_factory=dict)

    @property
    def accepted(self) -> list[str]:
        return [s["output"] for r in self.records for s in r.get("segments", []) if s.get("output")]

    def to_json(self) -> str:
        return json.dumps({"config": self.config, "records": self.records}, indent=2,
                          sort_keys=True) + "\n"

    def write(self, path: str | os.PathLike) -> None:
        Path(path).write_text(self.to_json())


def _round(scores: dict[str, float]) -> dict[str, float]:
    return {k: round(float(v), 6) for k, v in scores.items()}


def _process_clip(path: Path, out_dir: Path, cfg: CurationConfig,
                  plugins: dict[str, ExternalScorer]) -> dict:
    rec: dict = {"input": path.name, "steps": {}}
    try:
        meta = read_meta(path)
        ok, why = filter_metadata(meta, cfg)
        rec["steps"]["metadata"] = why
        if not ok:
            rec["status"] = "rejected"
            rec["reason"] = f"metadata: {why}"
            return rec

        clip = read_clip(path)
        segments = detect_scenes(clip.frames, cfg)
        kept = keep_segments(segments, cfg)
        rec["scenes"] = [list(s) for s in segments]
        rec["steps"]["scene"] = f"{len(kept)}/{len(segments)} segments kept"
        if not kept:
            rec["status"] = "rejected"
            rec["reason"] = "scene: no segment with enough frames"
            return rec

        rec["segments"] = []
        for k, (a, b) in enumerate(kept):
            seg = clip.frames[a:b]
            srec: dict = {"range": [a, b]}
            rec["segments"].append(srec)
            tmp = None
            try:
                ext = [s for s in cfg.scorers if s not in _PROXIES]
                if ext:
                    tmp = Path(tempfile.mkdtemp(prefix="dove-seg-"))
                    write_clip(VideoClip(seg, clip.fps), tmp / "clip", force=True)
                accepted, scores, errors = score_quality(
                    seg, cfg.scorers, cfg, plugins, tmp / "clip" if tmp else None)
            finally:
                if tmp is not None:
                    shutil.rmtree(tmp, ignore_errors=True)
            srec["scores"] = _round(scores)
            if errors:
                srec["scorer_errors"] = errors
            if not accepted:
                srec["reason"] = "quality: " + ("; ".join(errors) if errors else "below threshold")
                continue

            bbox = motion_bbox(clip_flows(seg, cfg.flow_stride), cfg)
            srec["bbox"] = list(bbox.as_tuple()) if bbox else None
            crop, why = crop_and_emit(seg, bbox, cfg)
            if crop is None:
                srec["reason"] = f"motion: {why}"
                continue
            name = f"{path.name}_s{k:02d}"
            write_clip(VideoClip(crop, clip.fps), out_dir / name, force=True)
            srec["output"] = name
        outs = [s for s in rec["segments"] if "output" in s]
        rec["status"] = "accepted" if outs else "rejected"
        if not outs:
            rec["reason"] = "; ".join(s["reason"] for s in rec["segments"])
    except (ClipLoadError, DataError, OSError, ValueError) as exc:
        rec["status"] = "error"
        rec["reason"] = f"{type(exc).__name__}: {exc}"
    return rec


def run_pipeline(corpus_dir, out_dir, cfg: CurationConfig) -> CurationManifest:
    """Curate every clip under ``corpus_dir`` into ``out_dir`` and write ``manifest.json`` there."""
    corpus_dir, out_dir = Path(corpus_dir), Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = list_clips(corpus_dir)
    plugins = {name: ExternalScorer(argv, cfg.plugin_timeout) for name, argv in cfg.plugins.items()}
    try:
        work = lambda p: _process_clip(p, out_dir, cfg, plugins)
        if cfg.jobs > 1:
            with ThreadPoolExecutor(cfg.jobs) as pool:
                records = list(pool.map(work, paths))
        else:
            records = [work(p) for p in paths]
    finally:
        for s in plugins.values():
            s.close()
    conf = dataclasses.asdict(cfg)
    conf.pop("jobs")
    conf["scorers"] = list(conf["scorers"])
    manifest = CurationManifest(records=records, config=conf)
    manifest.write(out_dir / "manifest.json")
    log.info("curated %d clips, %d outputs", len(records), len(manifest.accepted))
    return manifest
