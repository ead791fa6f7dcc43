from __future__ import annotations

import math

import torch
import torch.nn.functional as F

from ..types import AamSoftmaxConfig

__all__ = ("aam_softmax_loss",)


def aam_softmax_loss(cosine: torch.Tensor, labels: torch.Tensor, config: AamSoftmaxConfig | None = None) -> torch.Tensor:
    """
    Additive angular margin softmax loss.

    Cross-entropy over `s * cos(theta_j + m * [j == label])`. When `theta + m` would pass
    pi the target logit falls back to `cos(theta) - m * sin(m)`, which keeps the loss
    monotone in the target angle.

    Args:
        cosine: `(B, N)` cosines between normalized embeddings and class weights
        labels: `(B,)` class indices
        config: Margin and scale, defaults to m=0.3, s=30

    Returns:
        Mean loss over the batch
    """
    config = config or AamSoftmaxConfig()
    if cosine.ndim != 2 or labels.shape != cosine.shape[:1]:
        raise ValueError("expected (B, N) cosines and (B,) labels")

    m, s = config.margin, config.scale
    cos_m, sin_m = math.cos(m), math.sin(m)
    threshold = math.cos(math.pi - m)
    fallback = math.sin(math.pi - m) * m

    sine = torch.sqrt((1.0 - cosine.pow(2)).clamp(min=1e-7))
    phi = cosine * cos_m - sine * sin_m
    phi = torch.where(cosine > threshold, phi, cosine - fallback)

    target = F.one_hot(labels, num_classes=cosine.shape[-1]).to(torch.bool)
    logits = s * torch.where(target, phi, cosine)
    return F.cross_entropy(logits, labels)
