from __future__ import annotations

from collections.abc import Sequence
from typing import ClassVar, Literal

import torch
from torch import nn

from ..core import argmax, majority_vote
from ..errors import ConfigError, GradientModeError
from ..model.xvector import XVectorClassifier
from ..types import ThreatMode

__all__ = "DefenseChain", "Domain", "Stage", "as_chain"

Domain = Literal["waveform", "spectrogram"]


class Stage(nn.Module):
    """
    One pre-processing defense.

    Waveform stages map `(B, T)` to `(B, T)`, spectrogram stages map
    `(B, frames, n_mels)` features to features of the same shape. Subclasses declare
    whether gradients flow through them exactly and whether an identity backward pass
    is an accepted approximation.
    """

    name: ClassVar[str] = "stage"
    domain: ClassVar[Domain] = "waveform"
    differentiable: ClassVar[bool] = True
    bpda_identity: ClassVar[bool] = True
    stochastic: ClassVar[bool] = False

    def forward(self, x: torch.Tensor, generator: torch.Generator | None = None) -> torch.Tensor:
        raise NotImplementedError


class DefenseChain(nn.Module):
    """
    Ordered defense stages in front of a classifier.

    Waveform stages run first, then the classifier's feature extractor, then spectrogram
    stages, then the classifier body. The threat mode decides how gradients pass the
    stages: E2ED differentiates every stage exactly, BPDA runs the true stages forward
    and treats each of them as the identity backward.

    Examples:
        >>> from xvguard.model import XVectorConfig, build_classifier
        >>> chain = DefenseChain([], build_classifier(XVectorConfig(n_speakers=4), seed=0).eval())
        >>> chain.id
        'none'
    """

    def __init__(
        self,
        stages: Sequence[Stage],
        classifier: XVectorClassifier,
        mode: ThreatMode = ThreatMode.BPDA,
        votes: int = 1,
    ) -> None:
        """
        Args:
            stages: Defenses in application order
            classifier: The wrapped classifier
            mode: Default threat mode for `forward`
            votes: Stochastic forward passes `predict` takes a majority vote over

        Raises:
            ConfigError: If a waveform stage follows a spectrogram stage
        """
        super().__init__()
        seen_spectrogram = False
        for stage in stages:
            if stage.domain == "spectrogram":
                seen_spectrogram = True
            elif seen_spectrogram:
                raise ConfigError(
                    f"waveform stage {stage.name!r} can't follow a spectrogram stage, "
                    "the pipeline no longer carries waveforms there"
                )
        self.stages = nn.ModuleList(stages)
        self.classifier = classifier
        self.mode = ThreatMode(mode)
        if votes < 1:
            raise ConfigError("votes must be >= 1")
        self.votes = votes

    @property
    def id(self) -> str:  # noqa: A003
        """Stage names joined by `+`, `none` for a bare classifier"""
        return "+".join(stage.name for stage in self.stages) or "none"

    @property
    def stochastic(self) -> bool:
        return any(stage.stochastic for stage in self.stages)

    def check_mode(self, mode: ThreatMode) -> None:
        """
        Verify a threat mode is legal for this chain.

        Raises:
            GradientModeError: E2ED through a non-differentiable stage, or BPDA through a
                non-differentiable stage without an identity approximation
        """
        mode = ThreatMode(mode)
        for stage in self.stages:
            if stage.differentiable:
                continue
            if mode is ThreatMode.E2ED:
                raise GradientModeError(f"stage {stage.name!r} is not differentiable, only BPDA attacks are possible")
            if not stage.bpda_identity:
                raise GradientModeError(f"stage {stage.name!r} declares no backward approximation for BPDA")

    def _apply(self, stage: Stage, x: torch.Tensor, mode: ThreatMode, generator: torch.Generator | None) -> torch.Tensor:
        if mode is ThreatMode.BPDA and stage.bpda_identity:
            # straight-through: true value forward, identity backward
            return x + (stage(x.detach(), generator) - x).detach()
        return stage(x, generator)

    def _features(self, x: torch.Tensor, mode: ThreatMode, generator: torch.Generator | None) -> torch.Tensor:
        self.check_mode(mode)
        x = x.unsqueeze(0) if x.ndim == 1 else x
        waveform_stages = [s for s in self.stages if s.domain == "waveform"]
        spectrogram_stages = [s for s in self.stages if s.domain == "spectrogram"]
        for stage in waveform_stages:
            x = self._apply(stage, x, mode, generator)
        features = self.classifier.features(x)
        for stage in spectrogram_stages:
            features = self._apply(stage, features, mode, generator)
        return features

    def attack_logits(
        self, x: torch.Tensor, mode: ThreatMode, generator: torch.Generator | None = None
    ) -> torch.Tensor:
        """Logits wired for gradients under `mode`."""
        return self.classifier.classify_features(self._features(x, ThreatMode(mode), generator))

    def attack_embeddings(
        self, x: torch.Tensor, mode: ThreatMode, generator: torch.Generator | None = None
    ) -> torch.Tensor:
        """Verification embeddings wired for gradients under `mode`."""
        return self.classifier.embed_features(self._features(x, ThreatMode(mode), generator))

    def forward(
        self,
        x: torch.Tensor,
        generator: torch.Generator | None = None,
        output: Literal["logits", "embedding"] = "logits",
    ) -> torch.Tensor:
        if output == "embedding":
            return self.attack_embeddings(x, self.mode, generator)
        return self.attack_logits(x, self.mode, generator)

    @torch.no_grad()
    def predict(self, x: torch.Tensor, generator: torch.Generator | None = None) -> torch.Tensor:
        """Defended prediction, ties to the lowest index."""
        if self.votes == 1 or not self.stochastic:
            return argmax(self(x, generator))
        return majority_vote([self(x, generator) for _ in range(self.votes)])


def as_chain(target: nn.Module, mode: ThreatMode = ThreatMode.BPDA) -> DefenseChain:
    """Wrap a bare classifier into an empty chain, chains pass through unchanged."""
    if isinstance(target, DefenseChain):
        return target
    if not isinstance(target, XVectorClassifier):
        raise TypeError("expected an XVectorClassifier or DefenseChain")
    return DefenseChain([], target, mode)
