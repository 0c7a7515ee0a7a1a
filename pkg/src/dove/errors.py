"""Exception types shared across the package."""


class DoveError(Exception):
    """Base class for all package errors."""


class ClipLoadError(DoveError):
    """A frame directory is missing, malformed, or inconsistent."""


class ShapeError(DoveError, ValueError):
    """Tensor or frame dimensions violate an operation's contract."""


class CapacityError(DoveError):
    """Input exceeds the denoiser's configured token budget."""


class CheckpointError(DoveError):
    pass


class IncompatibleCheckpointError(CheckpointError):
    """Checkpoint was produced under a different model configuration."""


class CorruptCheckpointError(CheckpointError):
    """Checkpoint bytes are truncated or do not match the manifest."""


class ConfigError(DoveError):
    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


class DataError(DoveError):
    """Training or curation input stream is empty or malformed."""


class TrainingError(DoveError):
    """Training diverged (non-finite loss or gradient)."""


class ScorerError(DoveError):
    """An external quality scorer timed out or broke protocol."""
