from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass

from ..errors import ConfigError, MissingArtifactError
from ..model.xvector import XVectorClassifier
from ..types import SmoothingConfig, ThreatMode
from .chain import DefenseChain, Domain, Stage, as_chain
from .defense_gan import (
    PATCH_FRAMES,
    DefenseGanConfig,
    DefenseGanStage,
    GanConfig,
    GanCritic,
    GanGenerator,
    defense_gan_project,
    extract_patches,
    gradient_penalty,
    train_wgan,
)
from .smoothing import SmoothingStage, smooth_predict
from .vae import VaeConfig, VaeModel, VaeStage, gaussian_kl, train_vae, vae_denoise
from .vocoder import (
    VocoderConfig,
    VocoderDiscriminator,
    VocoderModel,
    VocoderStage,
    train_vocoder,
    vocoder_reconstruct,
)

__all__ = (
    "PATCH_FRAMES",
    "STAGE_NAMES",
    "DefenseChain",
    "DefenseGanConfig",
    "DefenseGanStage",
    "DefenseModels",
    "Domain",
    "GanConfig",
    "GanCritic",
    "GanGenerator",
    "SmoothingStage",
    "Stage",
    "VaeConfig",
    "VaeModel",
    "VaeStage",
    "VocoderConfig",
    "VocoderDiscriminator",
    "VocoderModel",
    "VocoderStage",
    "as_chain",
    "build_chain",
    "defense_gan_project",
    "extract_patches",
    "gaussian_kl",
    "gradient_penalty",
    "smooth_predict",
    "train_vae",
    "train_vocoder",
    "train_wgan",
    "vae_denoise",
    "vocoder_reconstruct",
)

STAGE_NAMES = ("smoothing", "vae", "defense_gan", "vocoder")


@dataclass(frozen=True)
class DefenseModels:
    """Trained defense models available to chain building"""

    vae: VaeModel | None = None
    gan: GanGenerator | None = None
    vocoder: VocoderModel | None = None


def build_chain(
    stages: Sequence[str],
    classifier: XVectorClassifier,
    models: DefenseModels | None = None,
    *,
    smoothing: SmoothingConfig | None = None,
    defense_gan: DefenseGanConfig | None = None,
    mode: ThreatMode = ThreatMode.BPDA,
) -> DefenseChain:
    """
    Assemble a defense chain from stage names.

    The listed order of the model-based stages is kept. A `smoothing` stage is placed
    first among the waveform stages when `smoothing.placement` is `before` and last when
    it is `after`.

    Args:
        stages: Names from `STAGE_NAMES`
        classifier: Classifier the chain wraps
        models: Trained VAE, GAN generator and vocoder
        smoothing: Noise level, vote count and placement
        defense_gan: Projection settings
        mode: Threat mode of the chain

    Raises:
        ConfigError: On unknown or repeated stage names or incompatible domains
        MissingArtifactError: If a stage's trained model is absent

    Returns:
        The chain
    """
    models = models or DefenseModels()
    smoothing = smoothing or SmoothingConfig()
    unknown = [name for name in stages if name not in STAGE_NAMES]
    if unknown:
        raise ConfigError(f"unknown defense stage {unknown[0]!r}, expected one of {', '.join(STAGE_NAMES)}")

    if len(set(stages)) != len(stages):
        raise ConfigError("a defense stage can appear only once in a chain")

    built: list[Stage] = []
    for name in stages:
        match name:
            case "vae":
                if models.vae is None:
                    raise MissingArtifactError("vae checkpoint missing, run `xvguard train` with [training.vae]")
                built.append(VaeStage(models.vae))
            case "defense_gan":
                if models.gan is None:
                    raise MissingArtifactError("gan checkpoint missing, run `xvguard train` with [training.gan]")
                built.append(DefenseGanStage(models.gan, defense_gan))
            case "vocoder":
                if models.vocoder is None:
                    raise MissingArtifactError("vocoder checkpoint missing, run `xvguard train` with [training.vocoder]")
                built.append(VocoderStage(models.vocoder))

    votes = 1
    if "smoothing" in stages:
        noise = SmoothingStage(smoothing.sigma)
        votes = smoothing.n_samples
        waveform_count = sum(stage.domain == "waveform" for stage in built)
        position = 0 if smoothing.placement == "before" else waveform_count
        built.insert(position, noise)

    return DefenseChain(built, classifier, mode, votes=votes)
