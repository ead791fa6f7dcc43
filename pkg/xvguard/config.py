"""Run configuration: TOML sections, strict validation and provenance hashes."""

from __future__ import annotations

import math
import tomllib
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Literal

from .defenses import STAGE_NAMES, DefenseGanConfig, GanConfig, VaeConfig, VocoderConfig
from .errors import ConfigError, MissingArtifactError
from .model import TrainConfig, XVectorConfig
from .schema import from_mapping, stable_hash, to_mapping
from .types import (
    Algorithm,
    AdvTrainConfig,
    AttackConfig,
    CwConfig,
    SmoothingConfig,
    ThreatMode,
    UniversalConfig,
)

__all__ = (
    "DEFAULT_EPSILONS",
    "AdversarialSection",
    "AttackEntry",
    "DataConfig",
    "DefenseEntry",
    "FinetuneSection",
    "GridConfig",
    "OutputConfig",
    "RunConfig",
    "TrainingConfig",
    "VerificationSection",
    "load_config",
)

DEFAULT_EPSILONS = (1e-4, 1e-3, 1e-2, 1e-1, 2e-1)
BIM_ITERATIONS = (7, 50, 100)
CW_OUTER_ITERATIONS = (5, 10)

_STAGE_DOMAINS = {"smoothing": "waveform", "vocoder": "waveform", "vae": "spectrogram", "defense_gan": "spectrogram"}


@dataclass(frozen=True)
class DataConfig:
    """Corpus location and toy corpus shape"""

    manifest: Path | None = None
    """Existing manifest, the toy corpus under the output directory when None"""
    n_speakers: int = 40
    utts_per_speaker: int = 60
    duration_s: float = 3.0
    max_eval_utterances: int | None = None
    """Evaluate on the first N test utterances only"""

    def __post_init__(self) -> None:
        if self.n_speakers < 2 or self.utts_per_speaker < 3:
            raise ValueError("n_speakers must be >= 2 and utts_per_speaker >= 3")

        if self.duration_s <= 0:
            raise ValueError("duration_s must be positive")

        if self.max_eval_utterances is not None and self.max_eval_utterances < 1:
            raise ValueError("max_eval_utterances must be >= 1")


@dataclass(frozen=True)
class FinetuneSection:
    """Gaussian-augmented fine-tune of the base classifier"""

    sigma_range: tuple[float, float] = (0.0, 0.3)
    scope: Literal["full", "head"] = "full"
    train: TrainConfig = field(default_factory=lambda: TrainConfig(epochs=10))


@dataclass(frozen=True)
class AdversarialSection:
    """Adversarial training of the base classifier"""

    attack: AdvTrainConfig = field(default_factory=AdvTrainConfig)
    train: TrainConfig = field(default_factory=lambda: TrainConfig(epochs=10))


@dataclass(frozen=True)
class TrainingConfig:
    """What `xvguard train` produces, absent sections are skipped"""

    classifier: TrainConfig = field(default_factory=TrainConfig)
    finetune: FinetuneSection | None = None
    adversarial: AdversarialSection | None = None
    gan: GanConfig | None = None
    vae: VaeConfig | None = None
    vocoder: VocoderConfig | None = None


@dataclass(frozen=True)
class AttackEntry:
    """One attack family, expanded to one setting per epsilon"""

    algorithm: Algorithm
    epsilons: tuple[float, ...] = DEFAULT_EPSILONS
    p: float = math.inf
    alpha: float | None = None
    iterations: int = 7
    restarts: int = 0
    cw: CwConfig = field(default_factory=CwConfig)
    universal: UniversalConfig = field(default_factory=UniversalConfig)

    def __post_init__(self) -> None:
        object.__setattr__(self, "algorithm", Algorithm(self.algorithm))
        object.__setattr__(self, "epsilons", tuple(self.epsilons))

        if self.algorithm is not Algorithm.CW_L2 and not self.epsilons:
            raise ValueError("epsilons must not be empty")

        if self.algorithm is Algorithm.BIM and self.iterations not in BIM_ITERATIONS:
            raise ValueError(f"BIM iterations must be one of {BIM_ITERATIONS}")

        if self.algorithm is Algorithm.CW_L2 and self.cw.outer_iters not in CW_OUTER_ITERATIONS:
            raise ValueError(f"CW outer_iters must be one of {CW_OUTER_ITERATIONS}")

    def expand(self, seed: int = 0) -> list[AttackConfig]:
        """One `AttackConfig` per epsilon, a single one for CW."""
        base = AttackConfig(
            algorithm=self.algorithm,
            p=self.p,
            alpha=self.alpha,
            iterations=self.iterations,
            restarts=self.restarts,
            cw=self.cw,
            universal=self.universal,
            seed=seed,
        )
        if self.algorithm is Algorithm.CW_L2:
            return [base]
        return [base.with_epsilon(eps) for eps in self.epsilons]


@dataclass(frozen=True)
class DefenseEntry:
    """A named defense chain"""

    name: str
    stages: tuple[str, ...] = ()
    smoothing: SmoothingConfig = field(default_factory=SmoothingConfig)
    defense_gan: DefenseGanConfig = field(default_factory=DefenseGanConfig)
    mode: ThreatMode = ThreatMode.BPDA
    model: Literal["base", "gaussian", "adversarial"] = "base"
    """Which trained classifier the chain wraps"""
    attack_source: str | None = None
    """Evaluate attacks persisted for another defense instead of attacking this one"""

    def __post_init__(self) -> None:
        object.__setattr__(self, "stages", tuple(self.stages))
        object.__setattr__(self, "mode", ThreatMode(self.mode))

        if not self.name or "/" in self.name:
            raise ValueError("defense name must be non-empty and contain no '/'")

        unknown = [s for s in self.stages if s not in STAGE_NAMES]
        if unknown:
            raise ValueError(f"unknown defense stage {unknown[0]!r}, expected one of {', '.join(STAGE_NAMES)}")

        ordered = [_STAGE_DOMAINS[s] for s in self.stages if s != "smoothing"]
        if "spectrogram" in ordered and "waveform" in ordered[ordered.index("spectrogram") :]:
            raise ValueError("waveform stages must come before spectrogram stages")

        if self.attack_source == self.name:
            raise ValueError("a defense can't reuse its own attacks")


@dataclass(frozen=True)
class VerificationSection:
    """Verification trials scored under attack"""

    objective: Literal["cross_entropy", "cosine"] = "cross_entropy"
    nontargets_per_test: int = 1
    max_test_seconds: float = 5.0
    defenses: tuple[str, ...] = ()
    """Defenses to score, all when empty"""

    def __post_init__(self) -> None:
        if self.nontargets_per_test < 1 or self.max_test_seconds <= 0:
            raise ValueError("nontargets_per_test must be >= 1 and max_test_seconds positive")


@dataclass(frozen=True)
class GridConfig:
    jobs: int = 1
    surrogate: Literal["self", "independent"] = "independent"
    """Universal perturbations come from each chain's classifier or an independently seeded one"""
    verification: VerificationSection | None = None

    def __post_init__(self) -> None:
        if self.jobs < 1:
            raise ValueError("jobs must be >= 1")


@dataclass(frozen=True)
class OutputConfig:
    dir: Path = Path("runs/default")  # noqa: A003


@dataclass(frozen=True)
class RunConfig:
    """
    The whole run, one TOML document.

    Examples:
        >>> config = RunConfig.from_dict({"seed": 3, "attacks": [{"algorithm": "fgsm", "epsilons": [0.01]}]})
        >>> [a.id for a in config.attack_configs()]
        ['fgsm-linf-0.01']
    """

    seed: int = 0
    data: DataConfig = field(default_factory=DataConfig)
    model: XVectorConfig = field(default_factory=XVectorConfig)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    attacks: tuple[AttackEntry, ...] = ()
    defenses: tuple[DefenseEntry, ...] = (DefenseEntry(name="none"),)
    grid: GridConfig = field(default_factory=GridConfig)
    output: OutputConfig = field(default_factory=OutputConfig)

    def __post_init__(self) -> None:
        object.__setattr__(self, "attacks", tuple(self.attacks))
        object.__setattr__(self, "defenses", tuple(self.defenses))

        if self.seed < 0:
            raise ValueError("seed must be non-negative")

        if self.data.manifest is None and self.model.n_speakers != self.data.n_speakers:
            raise ValueError(f"model.n_speakers ({self.model.n_speakers}) must equal data.n_speakers ({self.data.n_speakers})")

        names = [d.name for d in self.defenses]
        if len(set(names)) != len(names):
            raise ValueError("defense names must be unique")

        by_name = {d.name: d for d in self.defenses}
        for defense in self.defenses:
            if defense.attack_source is None:
                continue
            source = by_name.get(defense.attack_source)
            if source is None:
                raise ValueError(f"defense {defense.name!r} reuses attacks of unknown defense {defense.attack_source!r}")
            if source.attack_source is not None:
                raise ValueError(f"defense {defense.attack_source!r} reuses attacks itself and can't be a source")

        ids = [c.id for c in self.attack_configs()]
        if len(set(ids)) != len(ids):
            raise ValueError("attack entries expand to duplicate attack ids")

        if self.grid.verification is not None:
            missing = set(self.grid.verification.defenses) - set(names)
            if missing:
                raise ValueError(f"verification names unknown defenses: {', '.join(sorted(missing))}")

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> RunConfig:
        """
        Raises:
            ConfigError: On unknown keys or invalid values
        """
        return from_mapping(cls, data)

    def attack_configs(self) -> list[AttackConfig]:
        """Every attack setting of the grid, in entry and epsilon order."""
        return [config for entry in self.attacks for config in entry.expand(self.seed)]

    def defense(self, name: str) -> DefenseEntry:
        for entry in self.defenses:
            if entry.name == name:
                return entry
        raise ConfigError(f"unknown defense {name!r}")

    @property
    def hash(self) -> str:  # noqa: A003
        """SHA-256 of the whole configuration"""
        return stable_hash(self)

    @property
    def model_hash(self) -> str:
        """SHA-256 of the sections that determine trained weights"""
        return stable_hash({"seed": self.seed, "data": self.data, "model": self.model, "training": self.training})

    def to_dict(self) -> dict[str, Any]:
        return to_mapping(self)

    def with_overrides(self, *, seed: int | None = None, out: str | Path | None = None, jobs: int | None = None) -> RunConfig:
        """Copy with command line overrides applied."""
        config = self
        if seed is not None:
            config = replace(config, seed=seed)
        if out is not None:
            config = replace(config, output=OutputConfig(dir=Path(out)))
        if jobs is not None:
            config = replace(config, grid=replace(config.grid, jobs=jobs))
        return config


def load_config(path: str | Path) -> RunConfig:
    """
    Read and validate a TOML run configuration.

    Raises:
        MissingArtifactError: If the file does not exist
        ConfigError: On syntax errors, unknown keys or invalid values
    """
    path = Path(path)
    if not path.is_file():
        raise MissingArtifactError(f"config file {path} not found")

    try:
        data = tomllib.loads(path.read_text())
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return RunConfig.from_dict(data)
