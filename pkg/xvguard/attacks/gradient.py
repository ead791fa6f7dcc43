"""Gradient attacks: FGSM, BIM and PGD with random restarts."""

from __future__ import annotations

import math

import torch
from torch import nn

from ..core import clamp_waveform, draw_seeds, project_lp_ball, seeded_rng
from ..model.gradients import AttackTarget, Objective, loss_and_grad, make_objective
from ..types import AttackResult, ThreatMode, Waveform, parse_norm_order
from .base import as_batch, build_result, random_init, steepest_step

__all__ = "bim", "fgsm", "pgd"


def _labels(y: torch.Tensor | int, batch: int) -> torch.Tensor:
    labels = torch.as_tensor(y, dtype=torch.long).reshape(-1)
    if labels.numel() == 1 and batch > 1:
        labels = labels.expand(batch)
    if labels.numel() != batch:
        raise ValueError(f"expected {batch} labels, got {labels.numel()}")
    return labels


def fgsm(
    target: nn.Module | AttackTarget,
    x: torch.Tensor | Waveform,
    y: torch.Tensor | int,
    eps: float,
    *,
    objective: Objective | None = None,
    mode: ThreatMode = ThreatMode.E2ED,
    generator: torch.Generator | None = None,
) -> AttackResult:
    """
    Fast gradient sign method.

    One step `delta = eps * sign(grad)` of the loss gradient at the benign input.

    Args:
        target: Classifier or defense chain
        x: Benign waveform(s)
        y: Benign label(s)
        eps: L-inf budget
        objective: Loss to maximize, cross-entropy of `target` by default
        mode: Threat mode for chains
        generator: Stream for stochastic stages

    Returns:
        The attack result
    """
    if eps < 0:
        raise ValueError("eps must be non-negative")

    x = as_batch(x)
    labels = _labels(y, x.shape[0])
    if eps == 0:
        return build_result(target, x, labels, torch.zeros_like(x), p=math.inf, budget=0.0, iterations=0, mode=mode, generator=generator)

    objective = objective or make_objective(target, labels, mode=mode, generator=generator)
    _, grad = loss_and_grad(objective, x)
    delta = eps * grad.sign()
    return build_result(target, x, labels, delta, p=math.inf, budget=eps, iterations=1, mode=mode, generator=generator)


def _pgd_run(
    objective: Objective,
    x: torch.Tensor,
    delta: torch.Tensor,
    *,
    p: float,
    eps: float,
    alpha: float,
    iterations: int,
) -> torch.Tensor:
    for _ in range(iterations):
        _, grad = loss_and_grad(objective, clamp_waveform(x + delta))
        delta = project_lp_ball(delta + steepest_step(grad, p, alpha), p, eps)
    return delta


def pgd(
    target: nn.Module | AttackTarget,
    x: torch.Tensor | Waveform,
    y: torch.Tensor | int,
    *,
    p: float | str = math.inf,
    eps: float,
    alpha: float | None = None,
    iterations: int = 7,
    restarts: int = 0,
    generator: torch.Generator | None = None,
    objective: Objective | None = None,
    mode: ThreatMode = ThreatMode.E2ED,
) -> AttackResult:
    """
    Projected gradient descent in the L_p ball.

    Every iterate steps along the steepest ascent direction of the loss (sign for L-inf,
    normalized gradient for L2) and is projected back onto the ball. With `restarts=0`
    the run starts from zero, which is exactly BIM. With `R >= 1` restarts each run
    starts from a uniform point of the ball drawn from its own stream. Stream seeds are
    drawn up front from `generator`, so restart 0 of an R-run matches a 1-restart run.
    Per utterance, the restart with the highest final loss is returned.

    Args:
        target: Classifier or defense chain
        x: Benign waveform(s)
        y: Benign label(s)
        p: 2 or inf
        eps: Budget
        alpha: Step size, eps / 5 by default
        iterations: Steps per run
        restarts: Random restarts, 0 for a single zero-initialised run
        generator: Caller stream, seed 0 when omitted
        objective: Loss to maximize, cross-entropy of `target` by default
        mode: Threat mode for chains

    Raises:
        UnsupportedNormError: If p is not 2 or inf

    Returns:
        The attack result
    """
    p = parse_norm_order(p)
    if eps < 0 or iterations < 0 or restarts < 0:
        raise ValueError("eps, iterations and restarts must be non-negative")

    alpha = eps / 5 if alpha is None else alpha
    x = as_batch(x)
    labels = _labels(y, x.shape[0])
    generator = generator if generator is not None else seeded_rng(0)

    if eps == 0 or iterations == 0:
        return build_result(target, x, labels, torch.zeros_like(x), p=p, budget=eps, iterations=0, mode=mode, generator=generator)

    if restarts == 0:
        run_objective = objective or make_objective(target, labels, mode=mode, generator=generator)
        delta = _pgd_run(run_objective, x, torch.zeros_like(x), p=p, eps=eps, alpha=alpha, iterations=iterations)
        return build_result(target, x, labels, delta, p=p, budget=eps, iterations=iterations, mode=mode, generator=generator)

    best_delta = torch.zeros_like(x)
    best_loss = torch.full((x.shape[0],), -math.inf, dtype=x.dtype)
    for seed in draw_seeds(generator, restarts):
        stream = seeded_rng(seed)
        init = project_lp_ball(random_init(x.shape, p, eps, stream, x.dtype), p, eps)
        run_objective = objective or make_objective(target, labels, mode=mode, generator=stream)
        delta = _pgd_run(run_objective, x, init, p=p, eps=eps, alpha=alpha, iterations=iterations)
        with torch.no_grad():
            final = run_objective(clamp_waveform(x + delta)).detach()
        better = final > best_loss
        best_loss = torch.where(better, final, best_loss)
        best_delta = torch.where(better.unsqueeze(-1), delta, best_delta)

    return build_result(
        target, x, labels, best_delta, p=p, budget=eps, iterations=iterations * restarts, mode=mode, generator=generator
    )


def bim(
    target: nn.Module | AttackTarget,
    x: torch.Tensor | Waveform,
    y: torch.Tensor | int,
    eps: float,
    *,
    alpha: float | None = None,
    iterations: int = 7,
    objective: Objective | None = None,
    mode: ThreatMode = ThreatMode.E2ED,
    generator: torch.Generator | None = None,
) -> AttackResult:
    """
    Basic iterative method, PGD-L-inf from a zero start without restarts.

    Args:
        target: Classifier or defense chain
        x: Benign waveform(s)
        y: Benign label(s)
        eps: L-inf budget
        alpha: Step size, eps / 5 by default
        iterations: Number of steps (7, 50 or 100 in the evaluation grid)
        objective: Loss to maximize
        mode: Threat mode for chains
        generator: Stream for stochastic stages
    """
    return pgd(
        target, x, y, p=math.inf, eps=eps, alpha=alpha, iterations=iterations, restarts=0,
        generator=generator, objective=objective, mode=mode,
    )
