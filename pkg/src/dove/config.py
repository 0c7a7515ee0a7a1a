"""Sectioned run configuration with defaults, validation and a stable fingerprint."""

from __future__ import annotations

import copy
import dataclasses
import os
from pathlib import Path

import yaml

from .curator import CurationConfig
from .degradation import DegradationConfig, StageRanges
from .diffusion import DEFAULT_BETA_END, DEFAULT_BETA_START, DEFAULT_T, DEFAULT_T_STAR, make_schedule
from .errors import ConfigError
from .losses import LossWeights
from .models import ModelConfig, config_fingerprint
from .trainer import TrainConfig

_STAGE = {k: (list(v) if isinstance(v, tuple) else v)
          for k, v in dataclasses.asdict(StageRanges()).items()}

DEFAULTS: dict = {
    "seed": 0,
    "diffusion": {"T": DEFAULT_T, "beta_start": DEFAULT_BETA_START, "beta_end": DEFAULT_BETA_END,
                  "t_star": DEFAULT_T_STAR},
    "model": {k: v for k, v in dataclasses.asdict(ModelConfig()).items() if k != "T"},
    "loss": {"lambda1": 1.0, "lambda2": 1.0, "extractor_seed": 0},
    "train": {
        "phi": 0.8,
        "stage1_iters": 2000,
        "stage2_iters": 200,
        "stage1_lr": 1e-3,
        "stage2_lr": 2e-4,
        "batch_size": 2,
        "clip_frames": 9,
        "betas": [0.9, 0.95],
        "weight_decay": 0.01,
        "grad_clip": 1.0,
        "crop": None,
        "lr_decay": "cosine",
        "augment": True,
        "vae_iters": 1500,
        "vae_lr": 2e-3,
        "vae_batch": 8,
        "vae_crop": 32,
    },
    "degrade": {
        "scale": 4,
        "first": dict(_STAGE),
        "second": {k: (list(v) if isinstance(v, tuple) else v)
                   for k, v in dataclasses.asdict(DegradationConfig().second).items()},
    },
    "curate": {k: (list(v) if isinstance(v, tuple) else v)
               for k, v in dataclasses.asdict(CurationConfig()).items()},
    "eval": {"metrics": ["psnr", "ssim", "warp"]},
    "io": {"chunk_frames": 25},
}

# keys whose values are free-form mappings
_OPEN = {("curate", "thresholds"), ("curate", "plugins")}
# keys that may be null in addition to their default type
_NULLABLE = {("train", "crop")}


def _check_type(path: tuple, default, value):
    key = ".".join(path)
    if path in _OPEN:
        if not isinstance(value, dict):
            raise ConfigError(key, f"expected a mapping, got {type(value).__name__}")
        return dict(value)
    if value is None:
        if path in _NULLABLE or default is None:
            return None
        raise ConfigError(key, "may not be null")
    if isinstance(default, dict):
        if not isinstance(value, dict):
            raise ConfigError(key, f"expected a section, got {type(value).__name__}")
        out = copy.deepcopy(default)
        for k, v in value.items():
            if k not in default:
                raise ConfigError(".".join(path + (k,)), "unknown key")
            out[k] = _check_type(path + (k,), default[k], v)
        return out
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(key, f"expected bool, got {type(value).__name__}")
        return value
    if isinstance(default, int) and not isinstance(default, bool):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(key, f"expected int, got {type(value).__name__}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(key, f"expected number, got {type(value).__name__}")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(key, f"expected string, got {type(value).__name__}")
        return value
    if isinstance(default, list) or default is None:
        if not isinstance(value, list):
            raise ConfigError(key, f"expected list, got {type(value).__name__}")
        if default:
            return [_check_type(path + (str(i),), default[0], v) for i, v in enumerate(value)]
        return list(value)
    raise ConfigError(key, f"unsupported value {value!r}")


def _range(values: dict) -> None:
    d, t, m, l = values["diffusion"], values["train"], values["model"], values["loss"]
    checks = [
        ("diffusion.T", d["T"] >= 1, "must be >= 1"),
        ("diffusion.beta_start", 0 < d["beta_start"] < 1, "must lie in (0, 1)"),
        ("diffusion.beta_end", d["beta_start"] <= d["beta_end"] < 1, "must lie in [beta_start, 1)"),
        ("diffusion.t_star", 1 <= d["t_star"] <= d["T"], "must lie in [1, T]"),
        ("train.phi", 0.0 <= t["phi"] <= 1.0, "must lie in [0, 1]"),
        ("train.stage1_iters", t["stage1_iters"] >= 1, "must be >= 1"),
        ("train.stage2_iters", t["stage2_iters"] >= 1, "must be >= 1"),
        ("train.stage1_lr", t["stage1_lr"] > 0, "must be positive"),
        ("train.stage2_lr", t["stage2_lr"] > 0, "must be positive"),
        ("train.batch_size", t["batch_size"] >= 1, "must be >= 1"),
        ("train.clip_frames", t["clip_frames"] >= 1, "must be >= 1"),
        ("train.betas", len(t["betas"]) == 2 and all(0 <= b < 1 for b in t["betas"]),
         "must be two values in [0, 1)"),
        ("train.weight_decay", t["weight_decay"] >= 0, "must be non-negative"),
        ("train.crop", t["crop"] is None or (len(t["crop"]) == 2 and min(t["crop"]) >= 1),
         "must be null or [h, w]"),
        ("train.lr_decay", t["lr_decay"] in ("cosine", "none"), "must be 'cosine' or 'none'"),
        ("loss.lambda1", l["lambda1"] >= 0, "must be non-negative"),
        ("loss.lambda2", l["lambda2"] >= 0, "must be non-negative"),
        ("degrade.scale", values["degrade"]["scale"] >= 1, "must be >= 1"),
        ("io.chunk_frames", values["io"]["chunk_frames"] >= 1, "must be >= 1"),
    ]
    for name in ("latent_channels", "factor", "vae_width", "width", "depth", "heads", "patch",
                 "mlp_ratio", "max_tokens"):
        checks.append((f"model.{name}", m[name] >= 1, "must be >= 1"))
    for key, ok, msg in checks:
        if not ok:
            raise ConfigError(key, msg)
    unknown = set(values["eval"]["metrics"]) - {"psnr", "ssim", "warp"}
    if unknown:
        raise ConfigError("eval.metrics", f"unknown metrics {sorted(unknown)}")
    # delegate the remaining structural checks to the typed configs
    for section, build in (("model", lambda: ModelConfig(**m, T=d["T"])),
                           ("degrade", lambda: _degradation(values).validate()),
                           ("curate", lambda: _curation(values))):
        try:
            build()
        except (TypeError, ValueError) as exc:
            raise ConfigError(section, str(exc)) from exc


def _degradation(values: dict) -> DegradationConfig:
    return DegradationConfig.from_dict(values["degrade"])


def _curation(values: dict) -> CurationConfig:
    c = dict(values["curate"])
    c["scorers"] = tuple(c["scorers"])
    return CurationConfig(**c)


@dataclasses.dataclass
class RunConfig:
    values: dict

    @property
    def seed(self) -> int:
        return self.values["seed"]

    def fingerprint(self) -> str:
        return config_fingerprint(self.values)

    def model_config(self) -> ModelConfig:
        return ModelConfig(**self.values["model"], T=self.values["diffusion"]["T"])

    def schedule(self):
        d = self.values["diffusion"]
        return make_schedule(d["T"], d["beta_start"], d["beta_end"])

    @property
    def t_star(self) -> int:
        return self.values["diffusion"]["t_star"]

    def loss_weights(self) -> LossWeights:
        return LossWeights(self.values["loss"]["lambda1"], self.values["loss"]["lambda2"])

    def train_config(self, stage: int) -> TrainConfig:
        t = self.values["train"]
        return TrainConfig(
            stage=stage, phi=t["phi"], iters=t[f"stage{stage}_iters"], lr=t[f"stage{stage}_lr"],
            batch_size=t["batch_size"], clip_frames=t["clip_frames"], betas=tuple(t["betas"]),
            weight_decay=t["weight_decay"], grad_clip=t["grad_clip"], weights=self.loss_weights(),
            t_star=self.t_star, scale=self.values["degrade"]["scale"], seed=self.seed,
            crop=tuple(t["crop"]) if t["crop"] else None,
            extractor_seed=self.values["loss"]["extractor_seed"], lr_decay=t["lr_decay"],
            augment=t["augment"])

    def degradation_config(self) -> DegradationConfig:
        return _degradation(self.values)

    def curation_config(self) -> CurationConfig:
        return _curation(self.values)


def build_config(overrides: dict | None = None, env: dict | None = None) -> RunConfig:
    values = _check_type((), DEFAULTS, overrides or {})
    env = os.environ if env is None else env
    if env.get("DOVE_SEED") not in (None, ""):
        try:
            values["seed"] = int(env["DOVE_SEED"])
        except ValueError as exc:
            raise ConfigError("seed", f"DOVE_SEED={env['DOVE_SEED']!r} is not an integer") from exc
    _range(values)
    return RunConfig(values)


def parse_config(path: str | os.PathLike | None, env: dict | None = None) -> RunConfig:
    """Load a YAML (or JSON) config file; missing keys take documented defaults."""
    data = {}
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ConfigError(str(path), "config file not found")
        try:
            data = yaml.safe_load(path.read_text()) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(str(path), f"unparseable: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError(str(path), "top level must be a mapping")
    return build_config(data, env)
