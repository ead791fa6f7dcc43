from __future__ import annotations

from collections.abc import Callable

import torch
import torch.nn.functional as F

from ..model.gradients import Objective

__all__ = ("cosine_objective",)


def cosine_objective(
    embed: Callable[[torch.Tensor], torch.Tensor], enroll: torch.Tensor, target: torch.Tensor
) -> Objective:
    """
    Verification loss on the trial score itself.

    Target trials push the cosine score down, non-target trials push it up, so
    maximizing the loss moves every trial toward the wrong decision.

    Args:
        embed: Maps `(B, T)` test waveforms to embeddings
        enroll: `(B, E)` enrollment embeddings, benign and fixed
        target: `(B,)` bool, True for same-speaker trials
    """
    sign = torch.where(target, -1.0, 1.0).to(enroll.dtype)
    reference = F.normalize(enroll.detach(), dim=-1)
    return lambda x: sign * (F.normalize(embed(x), dim=-1) * reference).sum(dim=-1)
