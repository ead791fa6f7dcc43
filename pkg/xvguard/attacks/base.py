from __future__ import annotations

import math

import torch
from torch import nn

from ..core import argmax, clamp_waveform, lp_norm
from ..model.gradients import AttackTarget, logits_of
from ..types import AdversarialPerturbation, AttackResult, ThreatMode, Waveform

__all__ = "as_batch", "build_result", "predict_labels", "random_init", "steepest_step"


def as_batch(x: torch.Tensor | Waveform) -> torch.Tensor:
    """`(B, T)` view of a waveform or tensor, detached."""
    samples = x.samples if isinstance(x, Waveform) else x
    samples = samples.unsqueeze(0) if samples.ndim == 1 else samples
    return samples.detach()


@torch.no_grad()
def predict_labels(
    target: nn.Module | AttackTarget,
    x: torch.Tensor,
    *,
    mode: ThreatMode = ThreatMode.E2ED,
    generator: torch.Generator | None = None,
) -> torch.Tensor:
    """Fresh forward pass prediction, ties to the lowest index."""
    return argmax(logits_of(target, mode, generator)(x))


def random_init(shape: torch.Size, p: float, eps: float, generator: torch.Generator, dtype: torch.dtype) -> torch.Tensor:
    """
    Uniform draw from the L_p ball of radius eps.

    L-inf draws coordinates from U(-eps, eps). L2 draws a Gaussian direction and a radius
    `eps * u^(1/T)`.
    """
    if p == math.inf:
        return (2 * torch.rand(shape, generator=generator, dtype=dtype) - 1) * eps

    direction = torch.randn(shape, generator=generator, dtype=dtype)
    direction = direction / direction.norm(dim=-1, keepdim=True).clamp_min(1e-12)
    u = torch.rand(shape[:-1] + (1,), generator=generator, dtype=dtype)
    return direction * eps * u.pow(1.0 / shape[-1])


def steepest_step(grad: torch.Tensor, p: float, alpha: float) -> torch.Tensor:
    """
    Steepest ascent step of length alpha under the L_p norm.

    Sign of the gradient for L-inf (exact zeros stay 0), normalized gradient for L2.
    """
    if p == math.inf:
        return alpha * grad.sign()
    norms = grad.norm(dim=-1, keepdim=True)
    return torch.where(norms > 0, alpha * grad / norms.clamp_min(1e-30), torch.zeros_like(grad))


def build_result(
    target: nn.Module | AttackTarget,
    x: torch.Tensor,
    y: torch.Tensor,
    delta: torch.Tensor,
    *,
    p: float,
    budget: float | None,
    iterations: int,
    mode: ThreatMode = ThreatMode.E2ED,
    generator: torch.Generator | None = None,
    success: torch.Tensor | None = None,
) -> AttackResult:
    """
    Package an attack outcome.

    The adversarial batch is `clamp(x + delta)`, norms are measured on what was actually
    added and success comes from a fresh forward pass unless the caller supplies it.
    """
    adversarial = clamp_waveform(x + delta).detach()
    realized = adversarial - x
    if success is None:
        success = predict_labels(target, adversarial, mode=mode, generator=generator) != y
    return AttackResult(
        adversarial=adversarial,
        perturbation=AdversarialPerturbation(delta=delta.detach(), norm_order=p, budget=budget),
        success=success,
        l2=lp_norm(realized, 2),
        linf=lp_norm(realized, math.inf),
        iterations_used=iterations,
    )
