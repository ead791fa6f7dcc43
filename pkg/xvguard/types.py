from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import StrEnum
from typing import Literal

import torch

SAMPLE_RATE = 16000
"""Sample rate every waveform in the toolkit uses"""

NORM_TOLERANCE = 1e-6
"""Slack allowed on budget checks"""


def parse_norm_order(p: float | int | str) -> float:
    """
    Normalize a norm order given as number or string.

    Args:
        p: 2, inf, "2", "inf" or "linf"

    Raises:
        UnsupportedNormError: If p is not 2 or infinity

    Returns:
        2.0 or math.inf
    """
    from .errors import UnsupportedNormError

    if isinstance(p, str):
        key = p.strip().lower()
        if key in ("inf", "linf", "infinity"):
            return math.inf
        if key in ("2", "l2"):
            return 2.0
        raise UnsupportedNormError(f"Unsupported norm order {p!r}, expected 2 or inf")

    if p == 2:
        return 2.0
    if p == math.inf:
        return math.inf
    raise UnsupportedNormError(f"Unsupported norm order {p!r}, expected 2 or inf")


def norm_name(p: float) -> str:
    """Short norm tag used in ids, `linf` or `l2`."""
    return "linf" if p == math.inf else "l2"


class ThreatMode(StrEnum):
    """How gradients flow through a defense chain"""

    E2ED = "e2ed"
    """Exact gradients through every stage"""
    BPDA = "bpda"
    """True forward pass, identity backward pass through defense stages"""


class Algorithm(StrEnum):
    """Attack algorithms"""

    FGSM = "fgsm"
    BIM = "bim"
    PGD = "pgd"
    CW_L2 = "cw_l2"
    UNIVERSAL = "universal"


# -----Signal Types-----


@dataclass(frozen=True, eq=False)
class Waveform:
    """Mono audio with samples in [-1, 1]"""

    samples: torch.Tensor
    """1-D float tensor of amplitudes"""
    sample_rate: int = SAMPLE_RATE
    """Sample rate in Hz"""

    def __post_init__(self) -> None:
        if not isinstance(self.samples, torch.Tensor):
            raise TypeError("samples must be a torch.Tensor")

        if self.samples.ndim != 1 or self.samples.numel() < 1:
            raise ValueError("samples must be a non-empty 1-D tensor")

        if not torch.is_floating_point(self.samples):
            raise TypeError("samples must be a floating point tensor")

        if self.sample_rate != SAMPLE_RATE:
            raise ValueError(f"sample_rate must be {SAMPLE_RATE}, got {self.sample_rate}")

        if not bool(torch.all(self.samples.abs() <= 1.0)):
            raise ValueError("samples must lie in [-1, 1]")

    def __len__(self) -> int:
        return int(self.samples.numel())

    @property
    def duration(self) -> float:
        """Duration in seconds"""
        return len(self) / self.sample_rate

    def as_batch(self) -> torch.Tensor:
        """The samples as a `(1, T)` batch."""
        return self.samples.unsqueeze(0)

    @classmethod
    def from_batch(cls, batch: torch.Tensor, index: int = 0) -> Waveform:
        """
        Take one row of a `(B, T)` batch as a waveform.

        Args:
            batch: The batch
            index: Row to take
        """
        return cls(samples=batch[index].detach().clamp(-1.0, 1.0))


@dataclass(frozen=True)
class SpeakerLabel:
    """Closed-set speaker class index"""

    index: int
    n_speakers: int | None = None

    def __post_init__(self) -> None:
        if not isinstance(self.index, int) or isinstance(self.index, bool):
            raise TypeError("index must be an integer")

        if self.index < 0:
            raise ValueError("index must be non-negative")

        if self.n_speakers is not None and self.index >= self.n_speakers:
            raise ValueError(f"index {self.index} out of range for {self.n_speakers} speakers")


@dataclass(frozen=True, eq=False)
class AdversarialPerturbation:
    """Additive perturbation and the budget it was produced under"""

    delta: torch.Tensor
    """`(B, T)` or `(T,)` perturbation"""
    norm_order: float
    """2.0 or math.inf"""
    budget: float | None = None
    """Epsilon for budget-constrained attacks, None for CW"""

    def __post_init__(self) -> None:
        object.__setattr__(self, "norm_order", parse_norm_order(self.norm_order))
        if self.budget is None:
            return

        if self.budget < 0:
            raise ValueError("budget must be non-negative")

        if float(self.norms().max()) > self.budget + NORM_TOLERANCE:
            raise ValueError(f"perturbation exceeds its L{norm_name(self.norm_order)[1:]} budget {self.budget}")

    def norms(self, p: float | None = None) -> torch.Tensor:
        """Per-row norm of delta (in the perturbation's own norm by default)."""
        from .core import lp_norm

        return lp_norm(self.delta, self.norm_order if p is None else p)


@dataclass(frozen=True)
class GradientRequest:
    """Which loss to differentiate w.r.t. the waveform samples"""

    loss_kind: Literal["cross_entropy", "cw_margin"] = "cross_entropy"
    kappa: float = 0.0
    """Confidence margin, only used by `cw_margin`"""

    def __post_init__(self) -> None:
        if self.loss_kind not in ("cross_entropy", "cw_margin"):
            raise ValueError("loss_kind must be 'cross_entropy' or 'cw_margin'")

        if self.kappa < 0:
            raise ValueError("kappa must be non-negative")


# -----Attack Configuration-----


@dataclass(frozen=True)
class CwConfig:
    """Carlini-Wagner search parameters"""

    kappa: float = 0.0
    lr: float = 1e-3
    inner_iters: int = 10
    outer_iters: int = 5
    c_init: float = 1.0
    c_bounds: tuple[float, float] = (1e-3, 1e3)
    refine_steps: int = 10
    """Bisection steps shrinking the best success along its own direction, 0 to skip"""

    def __post_init__(self) -> None:
        if self.kappa < 0:
            raise ValueError("kappa must be non-negative")

        if self.lr <= 0:
            raise ValueError("lr must be positive")

        if self.inner_iters < 1 or self.outer_iters < 1:
            raise ValueError("inner_iters and outer_iters must be >= 1")

        if self.refine_steps < 0:
            raise ValueError("refine_steps must be non-negative")

        low, high = self.c_bounds
        if not 0 < low <= self.c_init <= high:
            raise ValueError("c_init must lie inside c_bounds and bounds must be positive")


@dataclass(frozen=True)
class UniversalConfig:
    """Universal perturbation search parameters"""

    fool_rate: float = 0.8
    """Target fooled fraction P"""
    max_epochs: int = 5
    """Passes over the sample set before giving up"""
    steps_per_radius: int = 5
    """PGD steps spent at each trial radius of the per-sample step"""
    radius_levels: int = 4
    """Radii eps/2^(levels-1), ..., eps/2, eps are tried in turn"""

    def __post_init__(self) -> None:
        if not 0 < self.fool_rate <= 1:
            raise ValueError("fool_rate must lie in (0, 1]")

        if self.max_epochs < 1:
            raise ValueError("max_epochs must be >= 1")

        if self.steps_per_radius < 1 or self.radius_levels < 1:
            raise ValueError("steps_per_radius and radius_levels must be >= 1")

        if self.steps_per_radius * self.radius_levels > 20:
            raise ValueError("per-sample step is limited to 20 PGD iterations")


@dataclass(frozen=True)
class AttackConfig:
    """One attack setting of the evaluation grid"""

    algorithm: Algorithm
    epsilon: float = 0.0
    p: float = math.inf
    alpha: float | None = None
    """Step size, epsilon / 5 when None"""
    iterations: int = 7
    restarts: int = 0
    cw: CwConfig = field(default_factory=CwConfig)
    universal: UniversalConfig = field(default_factory=UniversalConfig)
    seed: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "algorithm", Algorithm(self.algorithm))
        object.__setattr__(self, "p", parse_norm_order(self.p))

        if self.epsilon < 0:
            raise ValueError("epsilon must be non-negative")

        if self.iterations < 0 or self.restarts < 0:
            raise ValueError("iterations and restarts must be non-negative")

        if self.algorithm is Algorithm.FGSM and self.p != math.inf:
            raise ValueError("FGSM is a sign step, p must be inf")

        if self.algorithm is Algorithm.BIM and (self.p != math.inf or self.restarts != 0):
            raise ValueError("BIM is PGD with p=inf and no restarts")

        if self.algorithm is Algorithm.CW_L2 and self.p != 2.0:
            object.__setattr__(self, "p", 2.0)

        if self.alpha is not None and self.alpha < 0:
            raise ValueError("alpha must be non-negative")

        if self.iterations > 0 and self.step_size <= 0 and self.epsilon > 0:
            raise ValueError("alpha must be positive when iterations > 0")

        if self.seed < 0:
            raise ValueError("seed must be non-negative")

    @property
    def step_size(self) -> float:
        """Resolved step size alpha"""
        return self.epsilon / 5 if self.alpha is None else self.alpha

    @property
    def id(self) -> str:  # noqa: A003
        """Stable identifier used in reports and artifact paths"""
        if self.algorithm is Algorithm.CW_L2:
            return f"cw_l2-k{self.cw.kappa:g}-o{self.cw.outer_iters}"

        tag = f"{self.algorithm.value}-{norm_name(self.p)}-{self.epsilon:g}"
        if self.algorithm in (Algorithm.BIM, Algorithm.PGD):
            tag += f"-it{self.iterations}"
        if self.algorithm is Algorithm.PGD and self.restarts:
            tag += f"-r{self.restarts}"
        return tag

    def with_epsilon(self, epsilon: float) -> AttackConfig:
        """Copy of this config with another budget."""
        return replace(self, epsilon=epsilon)


@dataclass(frozen=True, eq=False)
class AttackResult:
    """Outcome of attacking a batch of utterances"""

    adversarial: torch.Tensor
    """`(B, T)` adversarial waveforms, `clamp(x + delta, -1, 1)`"""
    perturbation: AdversarialPerturbation
    success: torch.Tensor
    """`(B,)` bool, prediction differs from the benign label"""
    l2: torch.Tensor
    """`(B,)` realized L2 norm of `adversarial - x`"""
    linf: torch.Tensor
    """`(B,)` realized L-inf norm of `adversarial - x`"""
    iterations_used: int

    def __post_init__(self) -> None:
        if self.adversarial.ndim != 2:
            raise ValueError("adversarial must be a (B, T) batch")

        if self.success.shape != self.adversarial.shape[:1]:
            raise ValueError("success must hold one flag per utterance")


# -----Defense and Training Configuration-----


@dataclass(frozen=True)
class SmoothingConfig:
    """Gaussian randomized smoothing"""

    sigma: float = 0.1
    """Noise standard deviation in waveform amplitude units"""
    n_samples: int = 1
    placement: Literal["before", "after"] = "before"
    """Whether smoothing runs before or after the other waveform stages of a chain"""

    def __post_init__(self) -> None:
        if self.sigma < 0:
            raise ValueError("sigma must be non-negative")

        if self.n_samples < 1:
            raise ValueError("n_samples must be >= 1")

        if self.placement not in ("before", "after"):
            raise ValueError("placement must be 'before' or 'after'")


@dataclass(frozen=True)
class AamSoftmaxConfig:
    """Additive angular margin softmax"""

    margin: float = 0.3
    scale: float = 30.0

    def __post_init__(self) -> None:
        if self.margin < 0:
            raise ValueError("margin must be non-negative")

        if self.scale <= 0:
            raise ValueError("scale must be positive")


@dataclass(frozen=True)
class AdvTrainConfig:
    """Adversarial training inner maximization"""

    algorithm: Literal["fgsm", "pgd_linf"] = "fgsm"
    epsilon: float | None = 0.001
    """Fixed budget, exclusive with `epsilon_range`"""
    epsilon_range: tuple[float, float] | None = None
    """Draw a fresh budget from U(a, b) at every update"""
    iterations: int = 10
    alpha_ratio: float = 0.2
    """Inner step as a fraction of the budget (alpha = eps / 5)"""
    max_loss_ratio: float = 1.0
    """Abort when the final epoch loss exceeds this multiple of the first epoch loss"""

    def __post_init__(self) -> None:
        if self.algorithm not in ("fgsm", "pgd_linf"):
            raise ValueError("algorithm must be 'fgsm' or 'pgd_linf'")

        if (self.epsilon is None) == (self.epsilon_range is None):
            raise ValueError("exactly one of epsilon and epsilon_range must be set")

        if self.epsilon is not None and self.epsilon < 0:
            raise ValueError("epsilon must be non-negative")

        if self.epsilon_range is not None:
            low, high = self.epsilon_range
            if not 0 <= low <= high:
                raise ValueError("epsilon_range must satisfy 0 <= a <= b")

        if self.algorithm == "pgd_linf" and self.iterations < 1:
            raise ValueError("PGD adversarial training needs iterations >= 1")

        if self.alpha_ratio <= 0:
            raise ValueError("alpha_ratio must be positive")

    def draw_epsilon(self, generator: torch.Generator) -> float:
        """
        Budget for one model update.

        Args:
            generator: Stream the uniform draw comes from
        """
        if self.epsilon is not None:
            return self.epsilon

        low, high = self.epsilon_range  # type: ignore[misc]
        u = float(torch.rand((), generator=generator, dtype=torch.float64))
        return low + (high - low) * u
