from __future__ import annotations

__all__ = (
    "CheckpointError",
    "ConfigError",
    "DivergenceError",
    "FeatureError",
    "GradientModeError",
    "IngestionError",
    "ManifestError",
    "MissingArtifactError",
    "UnsupportedNormError",
    "XvguardError",
)


class XvguardError(Exception):
    """Base class of every error raised by xvguard."""


class IngestionError(XvguardError, ValueError):
    """Audio file can't be ingested (wrong rate, channel count or format)."""


class FeatureError(XvguardError, ValueError):
    """Feature extraction input is unusable, e.g. shorter than one window."""


class UnsupportedNormError(XvguardError, ValueError):
    """Norm order outside {2, inf}."""


class ManifestError(XvguardError, ValueError):
    """Malformed, empty or inconsistent dataset manifest."""


class ConfigError(XvguardError, ValueError):
    """Run configuration or chain composition is invalid."""


class GradientModeError(XvguardError, ValueError):
    """Requested threat mode is not legal for the defense chain."""


class CheckpointError(XvguardError, ValueError):
    """Checkpoint is corrupted or was produced under another configuration."""


class MissingArtifactError(XvguardError, FileNotFoundError):
    """A prerequisite artifact is not on disk."""


class DivergenceError(XvguardError, RuntimeError):
    """Training produced a non-finite or non-decreasing loss."""

    def __init__(self, message: str, trace: list[float] | None = None) -> None:
        """
        Args:
            message: What diverged
            trace: Loss values observed so far
        """
        self.trace = list(trace or [])
        if self.trace:
            tail = ", ".join(f"{v:.4g}" for v in self.trace[-5:])
            message = f"{message} (last losses: {tail})"
        super().__init__(message)
