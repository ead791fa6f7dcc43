__version__ = "0.1.0"

from .config import RunConfig, load_config  # noqa: E402
from .defenses import DefenseChain, build_chain  # noqa: E402
from .errors import (  # noqa: E402
    CheckpointError,
    ConfigError,
    DivergenceError,
    FeatureError,
    GradientModeError,
    IngestionError,
    ManifestError,
    MissingArtifactError,
    UnsupportedNormError,
    XvguardError,
)
from .eval import EvalReport, accuracy_grid, verification_eval  # noqa: E402
from .model import XVectorClassifier, XVectorConfig, build_classifier  # noqa: E402
from .types import Algorithm, AttackConfig, AttackResult, ThreatMode, Waveform  # noqa: E402

__all__ = (
    "Algorithm",
    "AttackConfig",
    "AttackResult",
    "CheckpointError",
    "ConfigError",
    "DefenseChain",
    "DivergenceError",
    "EvalReport",
    "FeatureError",
    "GradientModeError",
    "IngestionError",
    "ManifestError",
    "MissingArtifactError",
    "RunConfig",
    "ThreatMode",
    "UnsupportedNormError",
    "Waveform",
    "XVectorClassifier",
    "XVectorConfig",
    "XvguardError",
    "accuracy_grid",
    "build_chain",
    "build_classifier",
    "load_config",
    "verification_eval",
)
