from __future__ import annotations

from dataclasses import dataclass, field

import torch
import torch.nn.functional as F
from torch import nn

from ..core import argmax
from ..dsp import FeatureConfig, LogMelExtractor
from ..types import AamSoftmaxConfig, Waveform

__all__ = "CosineClassifier", "StatsPooling", "XVectorClassifier", "XVectorConfig", "build_classifier", "predict"


@dataclass(frozen=True)
class XVectorConfig:
    """Shape of the reduced ThinResNet x-vector classifier"""

    n_speakers: int = 40
    widths: tuple[int, ...] = (8, 16, 32, 64)
    strides: tuple[int, ...] = (1, 2, 2, 2)
    blocks: tuple[int, ...] = (1, 1, 1, 1)
    embed_dim: int = 128
    features: FeatureConfig = field(default_factory=FeatureConfig)
    aam: AamSoftmaxConfig = field(default_factory=AamSoftmaxConfig)

    def __post_init__(self) -> None:
        object.__setattr__(self, "widths", tuple(self.widths))
        object.__setattr__(self, "strides", tuple(self.strides))
        object.__setattr__(self, "blocks", tuple(self.blocks))

        if self.n_speakers < 2:
            raise ValueError("n_speakers must be >= 2")

        if not len(self.widths) == len(self.strides) == len(self.blocks) >= 1:
            raise ValueError("widths, strides and blocks must have the same non-zero length")

        if min(self.widths) < 1 or min(self.blocks) < 1 or min(self.strides) < 1:
            raise ValueError("widths, strides and blocks must be positive")

        if self.embed_dim < 1:
            raise ValueError("embed_dim must be positive")

    @property
    def frame_channels(self) -> int:
        """Channels of the frame-level representation (last width times remaining Mel bins)"""
        bins = self.features.n_mels
        for stride in self.strides:
            bins = (bins - 1) // stride + 1
        return self.widths[-1] * bins


class _ResBlock(nn.Module):
    def __init__(self, in_channels: int, out_channels: int, stride: int) -> None:
        super().__init__()
        self.conv1 = nn.Conv2d(in_channels, out_channels, 3, stride=stride, padding=1, bias=False)
        self.bn1 = nn.BatchNorm2d(out_channels)
        self.conv2 = nn.Conv2d(out_channels, out_channels, 3, padding=1, bias=False)
        self.bn2 = nn.BatchNorm2d(out_channels)
        self.shortcut: nn.Module = nn.Identity()
        if stride != 1 or in_channels != out_channels:
            self.shortcut = nn.Sequential(
                nn.Conv2d(in_channels, out_channels, 1, stride=stride, bias=False), nn.BatchNorm2d(out_channels)
            )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        out = F.relu(self.bn1(self.conv1(x)))
        out = self.bn2(self.conv2(out))
        return F.relu(out + self.shortcut(x))


class StatsPooling(nn.Module):
    """Concatenated mean and standard deviation over time of `(B, C, T)` frames."""

    def __init__(self, eps: float = 1e-5) -> None:
        super().__init__()
        self.eps = eps

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        mean = x.mean(dim=-1)
        var = x.var(dim=-1, unbiased=False)
        return torch.cat([mean, torch.sqrt(var + self.eps)], dim=-1)


class CosineClassifier(nn.Module):
    """Cosine similarity between length-normalized embeddings and class weight vectors."""

    def __init__(self, embed_dim: int, n_classes: int) -> None:
        super().__init__()
        self.weight = nn.Parameter(torch.empty(n_classes, embed_dim))
        nn.init.xavier_uniform_(self.weight)

    def forward(self, embedding: torch.Tensor) -> torch.Tensor:
        return F.linear(F.normalize(embedding, dim=-1), F.normalize(self.weight, dim=-1))


class XVectorClassifier(nn.Module):
    """
    Waveform to speaker logits.

    Log-Mel front end, residual 2-D conv encoder, statistics pooling over time and a
    two-layer head. The first head layer is the embedding tap used for verification,
    the second is a cosine classifier so logits are `scale * cos(theta_j)`.

    Examples:
        >>> model = build_classifier(XVectorConfig(n_speakers=4), seed=0).eval()
        >>> model(torch.zeros(2, 16000)).shape
        torch.Size([2, 4])
    """

    def __init__(self, config: XVectorConfig) -> None:
        super().__init__()
        self.config = config
        self.extractor = LogMelExtractor(config.features)
        self.stem = nn.Sequential(
            nn.Conv2d(1, config.widths[0], 3, padding=1, bias=False),
            nn.BatchNorm2d(config.widths[0]),
            nn.ReLU(),
        )

        layers: list[nn.Module] = []
        in_channels = config.widths[0]
        for width, stride, count in zip(config.widths, config.strides, config.blocks):
            for i in range(count):
                layers.append(_ResBlock(in_channels, width, stride if i == 0 else 1))
                in_channels = width
        self.encoder = nn.Sequential(*layers)

        self.pooling = StatsPooling()
        self.embedding = nn.Linear(2 * config.frame_channels, config.embed_dim)
        self.classifier = CosineClassifier(config.embed_dim, config.n_speakers)

    @property
    def scale(self) -> float:
        return self.config.aam.scale

    def features(self, x: torch.Tensor) -> torch.Tensor:
        """`(B, T)` waveforms to `(B, frames, n_mels)` log-Mel features."""
        return self.extractor(x)

    def embed_features(self, features: torch.Tensor) -> torch.Tensor:
        """Embedding tap for `(B, frames, n_mels)` features."""
        h = self.stem(features.transpose(-1, -2).unsqueeze(1))
        h = self.encoder(h)
        frames = h.flatten(1, 2)
        return self.embedding(self.pooling(frames))

    def cosine_features(self, features: torch.Tensor) -> torch.Tensor:
        """Class cosines for features, before scaling."""
        return self.classifier(F.relu(self.embed_features(features)))

    def classify_features(self, features: torch.Tensor) -> torch.Tensor:
        """Logits for features."""
        return self.scale * self.cosine_features(features)

    def embed(self, x: torch.Tensor) -> torch.Tensor:
        """Speaker embeddings of `(B, T)` waveforms."""
        return self.embed_features(self.features(_as_batch(x)))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.classify_features(self.features(_as_batch(x)))


def _as_batch(x: torch.Tensor | Waveform) -> torch.Tensor:
    samples = x.samples if isinstance(x, Waveform) else x
    return samples.unsqueeze(0) if samples.ndim == 1 else samples


def build_classifier(config: XVectorConfig, seed: int) -> XVectorClassifier:
    """
    Initialize a classifier from a seed without touching the global RNG state.

    Args:
        config: Architecture
        seed: Initialization seed
    """
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        return XVectorClassifier(config)


@torch.no_grad()
def predict(model: nn.Module, x: torch.Tensor | Waveform) -> torch.Tensor:
    """
    Predicted class per utterance, ties to the lowest index.

    Args:
        model: Anything mapping `(B, T)` waveforms to logits
        x: Waveform or batch
    """
    return argmax(model(_as_batch(x)))
