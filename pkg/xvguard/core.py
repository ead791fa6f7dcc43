from __future__ import annotations

import hashlib
import math

import torch
import torch.nn.functional as F

from .types import parse_norm_order

__all__ = (
    "argmax",
    "clamp_waveform",
    "derive_seed",
    "draw_seeds",
    "lp_norm",
    "majority_vote",
    "project_lp_ball",
    "seeded_rng",
)

_SEED_BITS = 63


def seeded_rng(seed: int) -> torch.Generator:
    """
    Create an explicit random stream.

    Every stochastic operation in xvguard takes one of these instead of touching the
    global torch state.

    Args:
        seed: Non-negative seed

    Raises:
        ValueError: If seed is negative

    Examples:
        >>> a, b = seeded_rng(0), seeded_rng(0)
        >>> bool(torch.equal(torch.rand(100, generator=a), torch.rand(100, generator=b)))
        True
    """
    if not isinstance(seed, int) or isinstance(seed, bool):
        raise TypeError("seed must be an integer")

    if seed < 0:
        raise ValueError("seed must be non-negative")

    generator = torch.Generator()
    generator.manual_seed(seed)
    return generator


def derive_seed(*parts: object) -> int:
    """
    Derive a child seed from any number of identifying parts.

    Used to give each (run, defense, attack, utterance) task its own stream so results
    do not depend on worker count or processing order.

    Examples:
        >>> derive_seed(0, "vocoder", "bim-linf-0.01-it7", "spk00_utt001") == derive_seed(
        ...     0, "vocoder", "bim-linf-0.01-it7", "spk00_utt001"
        ... )
        True
    """
    digest = hashlib.blake2b("\x1f".join(map(str, parts)).encode(), digest_size=8).digest()
    return int.from_bytes(digest, "big") >> (64 - _SEED_BITS)


def draw_seeds(generator: torch.Generator, count: int) -> list[int]:
    """
    Draw `count` child seeds up front from a stream.

    Seeds are drawn one at a time, so the first `k` seeds of a longer draw equal a draw of
    `k` from the same state.
    """
    return [int(torch.randint(0, 2**62, (1,), generator=generator, dtype=torch.int64)) for _ in range(max(count, 0))]


def lp_norm(delta: torch.Tensor, p: float) -> torch.Tensor:
    """
    Per-row L_p norm over the last axis.

    Args:
        delta: `(..., T)` tensor
        p: 2 or inf

    Returns:
        Norms of shape `delta.shape[:-1]`
    """
    p = parse_norm_order(p)
    if p == math.inf:
        return delta.abs().amax(dim=-1)
    return torch.linalg.vector_norm(delta.double(), ord=2, dim=-1).to(delta.dtype)


def project_lp_ball(delta: torch.Tensor, p: float | str, eps: float) -> torch.Tensor:
    """
    Project each row of `delta` onto the L_p ball of radius `eps`.

    L-inf projection clips coordinatewise, L2 projection scales rows that lie outside the
    ball radially onto its surface. Rows already inside come back unchanged.

    Args:
        delta: `(..., T)` perturbation
        p: 2 or inf
        eps: Ball radius

    Raises:
        UnsupportedNormError: If p is not 2 or inf
        ValueError: If eps is negative

    Examples:
        >>> project_lp_ball(torch.tensor([0.5, -0.5]), "inf", 0.1)
        tensor([ 0.1000, -0.1000])
        >>> project_lp_ball(torch.tensor([3.0, 4.0]), 2, 1.0)
        tensor([0.6000, 0.8000])
    """
    if eps < 0:
        raise ValueError("eps must be non-negative")

    order = parse_norm_order(p)
    if order == math.inf:
        return delta.clamp(-eps, eps)

    # float64 norms keep the scaled row within rounding of eps
    norms = torch.linalg.vector_norm(delta.double(), ord=2, dim=-1, keepdim=True)
    outside = norms > eps + 1e-7
    scale = torch.where(outside, eps / norms.clamp_min(1e-30), torch.ones_like(norms))
    return (delta.double() * scale).to(delta.dtype)


def clamp_waveform(x: torch.Tensor) -> torch.Tensor:
    """Clamp amplitudes to [-1, 1]."""
    return x.clamp(-1.0, 1.0)


def argmax(values: torch.Tensor) -> torch.Tensor:
    """
    Argmax over the last axis, ties resolved to the lowest index.

    `torch.argmax` does not document its tie behavior, so the first maximal position is
    located explicitly.

    Examples:
        >>> argmax(torch.tensor([[1.0, 3.0, 3.0], [2.0, 2.0, 0.0]]))
        tensor([1, 0])
    """
    peak = values.amax(dim=-1, keepdim=True)
    hits = values == peak
    positions = torch.arange(values.shape[-1], device=values.device).expand_as(values)
    sentinel = torch.full_like(positions, values.shape[-1])
    return torch.where(hits, positions, sentinel).amin(dim=-1)


def majority_vote(logits: list[torch.Tensor]) -> torch.Tensor:
    """
    Most frequent argmax over several `(B, C)` logit draws, ties to the lowest class.

    Examples:
        >>> draws = [torch.tensor([[0.0, 1.0]]), torch.tensor([[1.0, 0.0]])]
        >>> majority_vote(draws)
        tensor([0])
    """
    if not logits:
        raise ValueError("at least one draw is required")
    classes = logits[0].shape[-1]
    votes = torch.stack([F.one_hot(argmax(scores), num_classes=classes) for scores in logits]).sum(dim=0)
    return argmax(votes)
