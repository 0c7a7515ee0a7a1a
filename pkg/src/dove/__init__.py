"""Toy-scale one-step diffusion video super-resolution.

The package covers the whole chain: clip I/O, dataset curation, LR/HR pair
synthesis, a latent denoiser with a frame-wise VAE, two-stage training,
inference and evaluation metrics.
"""

__version__ = "0.1.0"

from .diffusion import NoiseSchedule, alpha_bar, make_schedule, one_step_denoise
from .errors import (CapacityError, CheckpointError, ClipLoadError, ConfigError, CorruptCheckpointError,
                     DataError, DoveError, IncompatibleCheckpointError, ScorerError, ShapeError,
                     TrainingError)
from .media import ImageSample, VideoClip, read_clip, write_clip
from .models import Denoiser, ModelConfig, TinyVAE, load_checkpoint, load_models, save_checkpoint
from .restorer import RestorerPipeline, restore

__all__ = [
    "NoiseSchedule", "alpha_bar", "make_schedule", "one_step_denoise",
    "CapacityError", "CheckpointError", "ClipLoadError", "ConfigError", "CorruptCheckpointError",
    "DataError", "DoveError", "IncompatibleCheckpointError", "ScorerError", "ShapeError", "TrainingError",
    "ImageSample", "VideoClip", "read_clip", "write_clip",
    "Denoiser", "ModelConfig", "TinyVAE", "load_checkpoint", "load_models", "save_checkpoint",
    "RestorerPipeline", "restore",
]
