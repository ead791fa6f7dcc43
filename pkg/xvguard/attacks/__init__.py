from __future__ import annotations

import math

import torch
from torch import nn

from ..model.gradients import AttackTarget, Objective
from ..types import Algorithm, AttackConfig, AttackResult, ThreatMode
from .base import as_batch, build_result
from .cw import cw_l2
from .gradient import bim, fgsm, pgd
from .objectives import cosine_objective
from .universal import UniversalResult, apply_universal, fit_to_length, universal_perturbation

__all__ = (
    "UniversalResult",
    "apply_universal",
    "bim",
    "cosine_objective",
    "cw_l2",
    "fgsm",
    "fit_to_length",
    "pgd",
    "run_attack",
    "universal_perturbation",
)


def run_attack(
    config: AttackConfig,
    target: nn.Module | AttackTarget,
    x: torch.Tensor,
    y: torch.Tensor | int,
    *,
    generator: torch.Generator | None = None,
    mode: ThreatMode = ThreatMode.E2ED,
    objective: Objective | None = None,
    universal_delta: torch.Tensor | None = None,
) -> AttackResult:
    """
    Run one configured attack.

    Universal attacks are not searched here: the perturbation is computed once on a
    surrogate and passed as `universal_delta`, then applied to every utterance.

    Args:
        config: Attack setting
        target: Classifier or defense chain under attack
        x: Benign waveform(s)
        y: Benign label(s)
        generator: Per-utterance stream
        mode: Threat mode for chains
        objective: Loss override (verification cosine loss)
        universal_delta: Precomputed universal perturbation

    Returns:
        The attack result
    """
    match config.algorithm:
        case Algorithm.FGSM:
            return fgsm(target, x, y, config.epsilon, objective=objective, mode=mode, generator=generator)
        case Algorithm.BIM:
            return bim(
                target, x, y, config.epsilon, alpha=config.step_size, iterations=config.iterations,
                objective=objective, mode=mode, generator=generator,
            )
        case Algorithm.PGD:
            return pgd(
                target, x, y, p=config.p, eps=config.epsilon, alpha=config.step_size, iterations=config.iterations,
                restarts=config.restarts, generator=generator, objective=objective, mode=mode,
            )
        case Algorithm.CW_L2:
            return cw_l2(target, x, y, config.cw, mode=mode, generator=generator)
        case Algorithm.UNIVERSAL:
            if universal_delta is None:
                raise ValueError("universal attacks need a precomputed universal_delta")
            x = as_batch(x)
            labels = torch.as_tensor(y, dtype=torch.long).reshape(-1).expand(x.shape[0])
            delta = apply_universal(x, universal_delta) - x
            # tiling repeats an L2 perturbation, so its norm is only bounded when nothing is tiled
            bounded = config.p == math.inf or universal_delta.shape[-1] >= x.shape[-1]
            return build_result(
                target, x, labels, delta, p=config.p, budget=config.epsilon if bounded else None,
                iterations=0, mode=mode, generator=generator,
            )
    raise ValueError(f"unknown attack algorithm {config.algorithm!r}")
