from __future__ import annotations

from collections.abc import Callable
from typing import Protocol, runtime_checkable

import torch
import torch.nn.functional as F
from torch import nn

from ..types import GradientRequest, ThreatMode, Waveform

__all__ = (
    "AttackTarget",
    "Objective",
    "cw_margin",
    "grad_input",
    "logits_of",
    "loss_and_grad",
    "make_objective",
)

Objective = Callable[[torch.Tensor], torch.Tensor]
"""Maps `(B, T)` waveforms to a `(B,)` loss the attacker maximizes"""


@runtime_checkable
class AttackTarget(Protocol):
    """Anything that knows how to produce logits under a threat mode (defense chains)."""

    def attack_logits(
        self, x: torch.Tensor, mode: ThreatMode, generator: torch.Generator | None = None
    ) -> torch.Tensor: ...


def logits_of(
    target: nn.Module | AttackTarget,
    mode: ThreatMode = ThreatMode.E2ED,
    generator: torch.Generator | None = None,
) -> Callable[[torch.Tensor], torch.Tensor]:
    """
    Logit function an attacker differentiates.

    Plain classifiers ignore the mode, chains apply their BPDA or E2ED wiring.
    """
    if isinstance(target, AttackTarget):
        return lambda x: target.attack_logits(x, mode, generator)
    return lambda x: target(x)


def cw_margin(logits: torch.Tensor, labels: torch.Tensor, kappa: float = 0.0) -> torch.Tensor:
    """
    Carlini-Wagner margin `max(g_y - max_{j != y} g_j + kappa, 0)` per utterance.

    Zero means the utterance is misclassified with margin at least kappa.
    """
    true_logit = logits.gather(-1, labels.unsqueeze(-1)).squeeze(-1)
    others = logits.masked_fill(F.one_hot(labels, logits.shape[-1]).to(torch.bool), float("-inf"))
    return torch.clamp(true_logit - others.amax(dim=-1) + kappa, min=0.0)


def make_objective(
    target: nn.Module | AttackTarget,
    labels: torch.Tensor,
    request: GradientRequest | None = None,
    *,
    mode: ThreatMode = ThreatMode.E2ED,
    generator: torch.Generator | None = None,
) -> Objective:
    """
    Per-utterance loss of a target on its benign labels.

    Args:
        target: Classifier or defense chain
        labels: `(B,)` benign labels
        request: Loss kind, cross-entropy by default
        mode: Threat mode for chains
        generator: Stream for stochastic stages, one draw per call
    """
    request = request or GradientRequest()
    logits = logits_of(target, mode, generator)
    if request.loss_kind == "cw_margin":
        return lambda x: cw_margin(logits(x), labels, request.kappa)
    return lambda x: F.cross_entropy(logits(x), labels, reduction="none")


def loss_and_grad(objective: Objective, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """
    Evaluate an objective and its gradient w.r.t. the samples.

    Per-utterance losses are summed before differentiating, so each row of the gradient
    belongs to its own utterance. A loss that does not depend on the input yields a zero
    gradient.

    Returns:
        `(loss, gradient)` with shapes `(B,)` and `x.shape`
    """
    with torch.enable_grad():
        x = x.detach().requires_grad_(True)
        loss = objective(x)
        if not loss.requires_grad:
            return loss.detach(), torch.zeros_like(x)
        (grad,) = torch.autograd.grad(loss.sum(), x, allow_unused=True)
    if grad is None:
        grad = torch.zeros_like(x)
    return loss.detach(), grad.detach()


def grad_input(
    target: nn.Module | AttackTarget,
    x: torch.Tensor | Waveform,
    labels: torch.Tensor | int,
    request: GradientRequest | None = None,
    *,
    mode: ThreatMode = ThreatMode.E2ED,
    generator: torch.Generator | None = None,
) -> torch.Tensor:
    """
    Gradient of a classification loss w.r.t. the waveform samples.

    Args:
        target: Classifier or defense chain
        x: Waveform, `(T,)` or `(B, T)` samples
        labels: Benign label(s)
        request: Loss kind
        mode: Threat mode for chains
        generator: Stream for stochastic stages

    Raises:
        GradientModeError: If the chain can't be differentiated under `mode`

    Returns:
        Gradient with exactly the shape of the input samples
    """
    samples = x.samples if isinstance(x, Waveform) else x
    single = samples.ndim == 1
    batch = samples.unsqueeze(0) if single else samples
    labels = torch.as_tensor(labels, dtype=torch.long).reshape(-1)
    if (check_mode := getattr(target, "check_mode", None)) is not None:
        check_mode(mode)

    _, grad = loss_and_grad(make_objective(target, labels, request, mode=mode, generator=generator), batch)
    return grad.squeeze(0) if single else grad
