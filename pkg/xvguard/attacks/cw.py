from __future__ import annotations

import math

import torch
from torch import nn

from ..core import clamp_waveform
from ..model.gradients import AttackTarget, cw_margin, logits_of
from ..types import AttackResult, CwConfig, ThreatMode, Waveform
from .base import as_batch, build_result

__all__ = ("cw_l2",)


def cw_l2(
    target: nn.Module | AttackTarget,
    x: torch.Tensor | Waveform,
    y: torch.Tensor | int,
    config: CwConfig | None = None,
    *,
    mode: ThreatMode = ThreatMode.E2ED,
    generator: torch.Generator | None = None,
) -> AttackResult:
    """
    Carlini-Wagner L2 attack with a per-utterance binary search on c.

    Minimizes `||delta||_2^2 + c * f(x + delta)` with Adam, where
    `f = max(g_y - max_{j != y} g_j + kappa, 0)`. Each outer iteration warm-starts from
    the best success so far, or from the current iterate while there is none. An
    utterance that succeeded (f <= 0 at some checked iterate) gets a smaller c, one that
    failed a larger c, within `config.c_bounds`. Iterates are checked before every Adam
    step and once after the last one. The best success is then shrunk by bisection on
    its scale, keeping the smallest scale that still succeeds.

    Returns the successful candidate with the smallest realized L2 norm, otherwise the
    candidate with the smallest margin. Failure is a result state, never an error.

    Args:
        target: Classifier or defense chain
        x: Benign waveform(s)
        y: Benign label(s)
        config: Search parameters
        mode: Threat mode for chains
        generator: Stream for stochastic stages

    Returns:
        The attack result, `success[i]` means `f(x'_i) <= 0`
    """
    config = config or CwConfig()
    x = as_batch(x)
    batch = x.shape[0]
    labels = torch.as_tensor(y, dtype=torch.long).reshape(-1).expand(batch)
    logits = logits_of(target, mode, generator)
    low_bound, high_bound = config.c_bounds

    c = torch.full((batch,), config.c_init, dtype=x.dtype)
    lower = torch.zeros(batch, dtype=x.dtype)
    upper = torch.full((batch,), math.inf, dtype=x.dtype)

    best_delta = torch.zeros_like(x)
    best_l2 = torch.full((batch,), math.inf, dtype=x.dtype)
    fallback_delta = torch.zeros_like(x)
    fallback_margin = torch.full((batch,), math.inf, dtype=x.dtype)
    found = torch.zeros(batch, dtype=torch.bool)

    def record(delta: torch.Tensor, margin: torch.Tensor) -> torch.Tensor:
        nonlocal best_delta, best_l2, fallback_delta, fallback_margin, found
        l2 = (clamp_waveform(x + delta) - x).norm(dim=-1)
        success = margin <= 0
        improved = success & (l2 < best_l2)
        best_l2 = torch.where(improved, l2, best_l2)
        best_delta = torch.where(improved.unsqueeze(-1), delta, best_delta)
        closer = ~success & (margin < fallback_margin)
        fallback_margin = torch.where(closer, margin, fallback_margin)
        fallback_delta = torch.where(closer.unsqueeze(-1), delta, fallback_delta)
        found |= success
        return success

    delta = torch.zeros_like(x)
    for _ in range(config.outer_iters):
        delta = torch.where(found.unsqueeze(-1), best_delta, delta.detach()).requires_grad_(True)
        optimizer = torch.optim.Adam([delta], lr=config.lr)
        succeeded = torch.zeros(batch, dtype=torch.bool)
        for _ in range(config.inner_iters):
            with torch.enable_grad():
                margin = cw_margin(logits(clamp_waveform(x + delta)), labels, config.kappa)
                succeeded |= record(delta.detach(), margin.detach())
                loss = delta.pow(2).sum(dim=-1) + c * margin
                optimizer.zero_grad()
                loss.sum().backward()
            optimizer.step()

        with torch.no_grad():
            margin = cw_margin(logits(clamp_waveform(x + delta)), labels, config.kappa)
            succeeded |= record(delta.detach(), margin)

        upper = torch.where(succeeded, torch.minimum(upper, c), upper)
        lower = torch.where(succeeded, lower, torch.maximum(lower, c))
        bracketed = torch.isfinite(upper) & (lower > 0)
        c = torch.where(
            bracketed,
            (lower + upper) / 2,
            torch.where(succeeded, c / 2, c * 2),
        ).clamp(low_bound, high_bound)

    if config.refine_steps and bool(found.any()):
        with torch.no_grad():
            direction = best_delta.clone()
            low_scale = torch.zeros(batch, dtype=x.dtype)
            high_scale = torch.ones(batch, dtype=x.dtype)
            for _ in range(config.refine_steps):
                mid = (low_scale + high_scale) / 2
                margin = cw_margin(logits(clamp_waveform(x + mid.unsqueeze(-1) * direction)), labels, config.kappa)
                success = (margin <= 0) & found
                high_scale = torch.where(success, mid, high_scale)
                low_scale = torch.where(success, low_scale, mid)
            shrunk = high_scale.unsqueeze(-1) * direction
            l2 = (clamp_waveform(x + shrunk) - x).norm(dim=-1)
            improved = found & (l2 < best_l2)
            best_l2 = torch.where(improved, l2, best_l2)
            best_delta = torch.where(improved.unsqueeze(-1), shrunk, best_delta)

    chosen = torch.where(found.unsqueeze(-1), best_delta, fallback_delta)
    with torch.no_grad():
        success = cw_margin(logits(clamp_waveform(x + chosen)), labels, config.kappa) <= 0
    return build_result(
        target, x, labels, chosen, p=2.0, budget=None,
        iterations=config.outer_iters * config.inner_iters, mode=mode, generator=generator, success=success,
    )
