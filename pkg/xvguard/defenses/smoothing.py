from __future__ import annotations

import torch
from torch import nn

from ..core import argmax, majority_vote
from ..types import SmoothingConfig, Waveform
from .chain import DefenseChain, Stage

__all__ = "SmoothingStage", "smooth_predict"


class SmoothingStage(Stage):
    """Adds isotropic Gaussian noise to the waveform, fresh on every call."""

    name = "smoothing"
    domain = "waveform"
    differentiable = True
    bpda_identity = True
    stochastic = True

    def __init__(self, sigma: float) -> None:
        super().__init__()
        if sigma < 0:
            raise ValueError("sigma must be non-negative")
        self.sigma = sigma

    def forward(self, x: torch.Tensor, generator: torch.Generator | None = None) -> torch.Tensor:
        if self.sigma == 0:
            return x
        return x + self.sigma * torch.randn(x.shape, generator=generator, dtype=x.dtype, device=x.device)

    def extra_repr(self) -> str:
        return f"sigma={self.sigma}"


@torch.no_grad()
def smooth_predict(
    target: nn.Module,
    x: torch.Tensor | Waveform,
    config: SmoothingConfig,
    generator: torch.Generator | None = None,
) -> torch.Tensor:
    """
    Smoothed prediction `argmax_c P(g(x + n) = c)` estimated from `config.n_samples` draws.

    One draw returns the base prediction on the noisy input. Several draws vote, ties go
    to the lowest class index.

    Args:
        target: Classifier or defense chain
        x: Waveform(s)
        config: Noise level and sample count
        generator: Noise stream

    Returns:
        `(B,)` predicted labels
    """
    samples = x.samples if isinstance(x, Waveform) else x
    batch = samples.unsqueeze(0) if samples.ndim == 1 else samples
    noise = SmoothingStage(config.sigma)

    def logits(z: torch.Tensor) -> torch.Tensor:
        return target(z, generator) if isinstance(target, DefenseChain) else target(z)

    if config.sigma == 0:
        return argmax(logits(batch))

    return majority_vote([logits(noise(batch, generator)) for _ in range(config.n_samples)])
