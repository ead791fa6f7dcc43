from __future__ import annotations

import math
from dataclasses import dataclass

import torch
from torch import nn

from ..core import clamp_waveform, project_lp_ball, seeded_rng
from ..logger import get_logger
from ..model.gradients import AttackTarget, loss_and_grad, make_objective
from ..types import AdversarialPerturbation, ThreatMode, UniversalConfig, parse_norm_order
from .base import predict_labels, steepest_step

__all__ = "UniversalResult", "apply_universal", "fit_to_length", "universal_perturbation"

log = get_logger("universal")


@dataclass(frozen=True, eq=False)
class UniversalResult:
    """Outcome of a universal perturbation search"""

    perturbation: AdversarialPerturbation
    fooled_fraction: float
    epochs: int
    converged: bool
    """True when the target fooling rate was reached before the epoch cap"""


def fit_to_length(delta: torch.Tensor, length: int) -> torch.Tensor:
    """Tile a shorter universal perturbation, crop a longer one."""
    if delta.shape[-1] >= length:
        return delta[..., :length]
    repeats = math.ceil(length / delta.shape[-1])
    return delta.repeat(*([1] * (delta.ndim - 1)), repeats)[..., :length]


def apply_universal(x: torch.Tensor, delta: torch.Tensor) -> torch.Tensor:
    """
    Add a universal perturbation to a `(B, T)` batch.

    Returns:
        `clamp(x + delta)` with delta tiled or cropped to `T`
    """
    return clamp_waveform(x + fit_to_length(delta, x.shape[-1]))


def _fooled(
    target: nn.Module | AttackTarget, x: torch.Tensor, reference: torch.Tensor, delta: torch.Tensor, mode: ThreatMode
) -> torch.Tensor:
    return predict_labels(target, apply_universal(x, delta), mode=mode) != reference


def _minimal_step(
    target: nn.Module | AttackTarget,
    x: torch.Tensor,
    reference: torch.Tensor,
    p: float,
    eps: float,
    config: UniversalConfig,
    mode: ThreatMode,
) -> torch.Tensor:
    """Short PGD with a growing radius until `x` is fooled."""
    objective = make_objective(target, reference, mode=mode)
    r = torch.zeros_like(x)
    for level in reversed(range(config.radius_levels)):
        radius = eps / 2**level
        for _ in range(config.steps_per_radius):
            _, grad = loss_and_grad(objective, clamp_waveform(x + r))
            r = project_lp_ball(r + steepest_step(grad, p, radius / config.steps_per_radius * 2), p, radius)
        if bool(predict_labels(target, clamp_waveform(x + r), mode=mode).ne(reference).all()):
            break
    return r


def universal_perturbation(
    target: nn.Module | AttackTarget,
    x: torch.Tensor,
    *,
    p: float | str = math.inf,
    eps: float,
    config: UniversalConfig | None = None,
    labels: torch.Tensor | None = None,
    generator: torch.Generator | None = None,
    mode: ThreatMode = ThreatMode.E2ED,
) -> UniversalResult:
    """
    Search a single perturbation that fools the model on a fraction of `x`.

    Each epoch visits the utterances in a random order. An utterance the current
    perturbation does not fool gets a minimal extra perturbation (short PGD with growing
    radius), and the sum is projected back onto the L_p ball. The search stops once the
    fooled fraction reaches `config.fool_rate` or after `config.max_epochs` epochs.

    Args:
        target: Surrogate classifier or chain
        x: `(N, T)` utterances of equal length
        p: 2 or inf
        eps: Budget
        config: Fooling rate, epoch cap and inner-step shape
        labels: True labels; fooling means a prediction other than the label. When
            omitted, fooling means a prediction other than the benign prediction
        generator: Stream for the visiting order
        mode: Threat mode for chains

    Returns:
        The perturbation of shape `(T,)` and the reached fooling rate
    """
    config = config or UniversalConfig()
    p = parse_norm_order(p)
    if eps < 0:
        raise ValueError("eps must be non-negative")

    x = x.detach()
    generator = generator if generator is not None else seeded_rng(0)
    reference = labels if labels is not None else predict_labels(target, x, mode=mode)
    delta = torch.zeros(x.shape[-1], dtype=x.dtype)

    def rate() -> float:
        return float(_fooled(target, x, reference, delta, mode).double().mean())

    fooled_fraction = rate()
    epochs = 0
    while fooled_fraction < config.fool_rate and epochs < config.max_epochs and eps > 0:
        for i in torch.randperm(x.shape[0], generator=generator).tolist():
            xi, yi = x[i : i + 1], reference[i : i + 1]
            if bool(_fooled(target, xi, yi, delta, mode).all()):
                continue
            r = _minimal_step(target, apply_universal(xi, delta), yi, p, eps, config, mode)
            delta = project_lp_ball(delta + r[0], p, eps)
        epochs += 1
        fooled_fraction = rate()
        log.info(f"universal epoch {epochs}: fooled {fooled_fraction:.3f} of {x.shape[0]} (target {config.fool_rate})")

    return UniversalResult(
        perturbation=AdversarialPerturbation(delta=delta, norm_order=p, budget=eps),
        fooled_fraction=fooled_fraction,
        epochs=epochs,
        converged=fooled_fraction >= config.fool_rate,
    )
