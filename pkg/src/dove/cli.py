"""Command-line entry point: curate, degrade, train, restore, eval.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import json
import logging
import platform
import sys
import time
from pathlib import Path

import numpy as np
import torch

from . import __version__
from .config import RunConfig, parse_config
from .curator import run_pipeline
from .degradation import apply_degradation, make_recipe
from .errors import ConfigError, DataError, DoveError
from .media import META_NAME, VideoClip, list_clips, read_clip, write_clip
from .metrics import evaluate
from .models import Denoiser, TinyVAE, load_models
from .restorer import RestorerPipeline, restore
from .trainer import (load_training_state, pretrain_vae, save_training, train_stage1, train_stage2,
                      write_log)

log = logging.getLogger("dove")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="dove", description="One-step diffusion video super-resolution toolkit.")
    p.add_argument("--version", action="version", version=f"dove {__version__}")
    sub = p.add_subparsers(dest="command", metavar="{curate,degrade,train,restore,eval}")

    c = sub.add_parser("curate", help="filter a raw clip corpus into training clips")
    c.add_argument("--input", required=True)
    c.add_argument("--output", required=True)
    c.add_argument("--config")
    c.add_argument("--jobs", type=int)

    d = sub.add_parser("degrade", help="synthesize LR/HR training pairs")
    d.add_argument("--input", required=True)
    d.add_argument("--output", required=True)
    d.add_argument("--config")
    d.add_argument("--seed", type=int)

    t = sub.add_parser("train", help="run training stage 1 or 2")
    t.add_argument("--stage", type=int, choices=(1, 2), required=True)
    t.add_argument("--config")
    t.add_argument("--data", required=True, help="directory with hr/ and lr/ clip folders")
    t.add_argument("--images", help="directory with hr/ and lr/ single-frame clips (stage 2)")
    t.add_argument("--output", required=True, help="checkpoint file to write")
    t.add_argument("--init", help="stage-1 checkpoint to start stage 2 from")
    t.add_argument("--resume", help="checkpoint of an interrupted run of the same stage")

    r = sub.add_parser("restore", help="super-resolve clips with a trained checkpoint")
    r.add_argument("--input", required=True)
    r.add_argument("--output", required=True)
    r.add_argument("--checkpoint", required=True)
    r.add_argument("--config")
    r.add_argument("--t-star", type=int)
    r.add_argument("--scale", type=int)

    e = sub.add_parser("eval", help="compute PSNR / SSIM / warping error")
    e.add_argument("--pred", required=True)
    e.add_argument("--ref")
    e.add_argument("--metrics")
    e.add_argument("--config")
    e.add_argument("--out", required=True)
    return p


def _clip_dirs(root: Path) -> list[Path]:
    if (root / META_NAME).is_file():
        return [root]
    return list_clips(root)


def _versions() -> dict:
    return {"dove": __version__, "python": platform.python_version(), "numpy": np.__version__,
            "torch": torch.__version__}


def _write_record(out: Path, command: str, cfg: RunConfig, timings: dict) -> None:
    out.mkdir(parents=True, exist_ok=True)
    rec = {"command": command, "config_fingerprint": cfg.fingerprint(), "seed": cfg.seed,
           "versions": _versions(), "timings": timings}
    (out / f"run_record.{command}.json").write_text(json.dumps(rec, indent=2, sort_keys=True) + "\n")


# ------------------------------------------------------------------ commands


def cmd_curate(args, cfg: RunConfig) -> dict:
    cur = cfg.curation_config()
    if args.jobs:
        cur = type(cur)(**{**cur.__dict__, "jobs": args.jobs})
    manifest = run_pipeline(args.input, args.output, cur)
    return {"accepted": len(manifest.accepted), "inputs": len(manifest.records)}


def _even_crop(frames: np.ndarray, multiple: int) -> tuple[np.ndarray, list[int]]:
    h, w = frames.shape[-2:]
    nh, nw = h - h % multiple, w - w % multiple
    if nh == 0 or nw == 0:
        raise DataError(f"clip {h}x{w} smaller than required multiple {multiple}")
    top, left = (h - nh) // 2, (w - nw) // 2
    return frames[..., top:top + nh, left:left + nw], [top, left, nh, nw]


def cmd_degrade(args, cfg: RunConfig) -> dict:
    seed = cfg.seed if args.seed is None else args.seed
    dcfg = cfg.degradation_config()
    mcfg = cfg.model_config()
    multiple = dcfg.scale * mcfg.patch * max(1, mcfg.factor // dcfg.scale)
    out = Path(args.output)
    clips = _clip_dirs(Path(args.input))
    if not clips:
        raise DataError(f"no clips under {args.input}")
    for k, path in enumerate(clips):
        hr, box = _even_crop(read_clip(path).frames, multiple)
        recipe = make_recipe(dcfg, seed * 100003 + k)
        lr = apply_degradation(VideoClip(hr), recipe)
        write_clip(VideoClip(hr), out / "hr" / path.name)
        write_clip(lr, out / "lr" / path.name)
        side = {"source": path.name, "hr_crop": box, "recipe": recipe.to_dict()}
        (out / "lr" / f"{path.name}.recipe.json").write_text(json.dumps(side, indent=2, sort_keys=True) + "\n")
    return {"clips": len(clips)}


def _load_pairs(root: Path, window: int) -> list[tuple[np.ndarray, np.ndarray]]:
    """Paired hr/lr clips split into non-overlapping windows of ``window`` frames."""
    hr_dir, lr_dir = root / "hr", root / "lr"
    if not hr_dir.is_dir() or not lr_dir.is_dir():
        raise DataError(f"{root} needs hr/ and lr/ sub-directories")
    pairs = []
    for hr_path in list_clips(hr_dir):
        lr_path = lr_dir / hr_path.name
        if not lr_path.is_dir():
            raise DataError(f"no LR clip for {hr_path.name}")
        hr, lr = read_clip(hr_path).frames, read_clip(lr_path).frames
        if len(hr) != len(lr):
            raise DataError(f"{hr_path.name}: {len(hr)} HR vs {len(lr)} LR frames")
        step = min(window, len(hr))
        for a in range(0, len(hr) - step + 1, step):
            pairs.append((lr[a:a + step], hr[a:a + step]))
    if not pairs:
        raise DataError(f"no training pairs under {root}")
    return pairs


def cmd_train(args, cfg: RunConfig) -> dict:
    torch.manual_seed(cfg.seed)
    tcfg = cfg.train_config(args.stage)
    t = cfg.values["train"]
    pairs = _load_pairs(Path(args.data), tcfg.clip_frames)
    out = Path(args.output)
    log_path = out.with_suffix(".log.jsonl")
    state = None

    if args.resume:
        vae, den, _ = load_models(args.resume, cfg.model_config())
        state = load_training_state(args.resume)
    elif args.stage == 2:
        if not args.init:
            raise DataError("stage 2 needs --init <stage-1 checkpoint> or --resume")
        vae, den, _ = load_models(args.init, cfg.model_config())
    else:
        mcfg = cfg.model_config()
        vae, den = TinyVAE(mcfg), Denoiser(mcfg)
        frames = [f for _, hr in pairs for f in hr]
        pretrain_vae(vae, frames, iters=t["vae_iters"], lr=t["vae_lr"], batch_size=t["vae_batch"],
                     crop=min(t["vae_crop"], *frames[0].shape[-2:]), seed=cfg.seed)

    if args.stage == 1:
        state = train_stage1(vae, den, pairs, tcfg, state=state)
    else:
        if args.images:
            images = [(lr[0], hr[0]) for lr, hr in _load_pairs(Path(args.images), 1)]
        else:
            # single frames of the training clips stand in for a separate image set
            images = [(lr[i], hr[i]) for lr, hr in pairs for i in range(len(lr))]
        state = train_stage2(vae, den, pairs, images, tcfg, state=state)
    save_training(out, vae, den, state, tcfg, run_fingerprint=cfg.fingerprint())
    write_log(state.history, log_path)
    return {"steps": state.step, "final_loss": state.history[-1]["loss"] if state.history else None}


def cmd_restore(args, cfg: RunConfig) -> dict:
    vae, den, _ = load_models(args.checkpoint, cfg.model_config() if args.config else None)
    pipe = RestorerPipeline(vae, den, cfg.schedule() if args.config else None,
                            t_star=args.t_star or cfg.t_star,
                            scale=args.scale or cfg.values["degrade"]["scale"],
                            chunk_frames=cfg.values["io"]["chunk_frames"])
    src = Path(args.input)
    clips = _clip_dirs(src)
    if not clips:
        raise DataError(f"no clips under {args.input}")
    out = Path(args.output)
    for path in clips:
        target = out if path == src else out / path.name
        write_clip(restore(pipe, read_clip(path)), target, force=True)
    return {"clips": len(clips)}


def cmd_eval(args, cfg: RunConfig) -> dict:
    metrics = args.metrics.split(",") if args.metrics else cfg.values["eval"]["metrics"]
    unknown = set(metrics) - {"psnr", "ssim", "warp"}
    if unknown:
        raise UsageError(f"unknown metrics {sorted(unknown)}")
    if args.ref is None and {"psnr", "ssim"} & set(metrics):
        raise UsageError("psnr and ssim need --ref")
    report = evaluate(args.pred, args.ref, metrics)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    report.write(args.out)
    return {"mean": report.to_dict()["mean"]}


COMMANDS = {"curate": cmd_curate, "degrade": cmd_degrade, "train": cmd_train,
            "restore": cmd_restore, "eval": cmd_eval}


def _record_dir(args) -> Path:
    if args.command == "train":
        return Path(args.output).parent
    if args.command == "eval":
        return Path(args.out).parent
    return Path(args.output)


def dispatch(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError("a subcommand is required")
        cfg = parse_config(args.config)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(json.dumps({"error": "usage", "message": str(exc)}), file=sys.stderr)
        return 2
    except ConfigError as exc:
        print(json.dumps({"error": "config", "key": exc.key, "message": str(exc)}), file=sys.stderr)
        return 2

    start = time.perf_counter()
    try:
        result = COMMANDS[args.command](args, cfg)
    except UsageError as exc:
        print(json.dumps({"error": "usage", "message": str(exc)}), file=sys.stderr)
        return 2
    except (DoveError, OSError, ValueError) as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 1
    _write_record(_record_dir(args), args.command, cfg, {"seconds": round(time.perf_counter() - start, 3)})
    print(json.dumps(result, sort_keys=True))
    return 0


def main() -> None:
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
