from __future__ import annotations

import copy
import math
from collections.abc import Callable
from dataclasses import dataclass
from typing import Literal

import torch
from torch.utils.data import DataLoader, TensorDataset

from ..core import derive_seed, seeded_rng
from ..errors import DivergenceError
from ..logger import get_logger
from ..types import AdvTrainConfig
from .losses import aam_softmax_loss
from .xvector import XVectorClassifier

__all__ = "TrainConfig", "adversarial_train", "fine_tune_gaussian", "train_classifier"

log = get_logger("training")

MIN_UTTERANCES = 10

BatchHook = Callable[[XVectorClassifier, torch.Tensor, torch.Tensor], torch.Tensor]
"""Rewrites a training batch before the update (augmentation, inner maximization)"""


@dataclass(frozen=True)
class TrainConfig:
    """Classifier optimization settings"""

    epochs: int = 30
    lr: float = 1e-3
    batch_size: int = 32
    augment_sigma: float = 0.0
    """Upper bound of per-utterance Gaussian augmentation noise, 0 disables it"""

    def __post_init__(self) -> None:
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")

        if self.lr <= 0:
            raise ValueError("lr must be positive")

        if self.augment_sigma < 0:
            raise ValueError("augment_sigma must be non-negative")


def _gaussian_hook(sigma_range: tuple[float, float], generator: torch.Generator) -> BatchHook | None:
    low, high = sigma_range
    if high <= 0:
        return None

    def hook(model: XVectorClassifier, x: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
        sigma = low + (high - low) * torch.rand(x.shape[0], 1, generator=generator, dtype=x.dtype)
        return x + sigma * torch.randn(x.shape, generator=generator, dtype=x.dtype)

    return hook


def _fit(
    model: XVectorClassifier,
    x: torch.Tensor,
    y: torch.Tensor,
    config: TrainConfig,
    seed: int,
    *,
    hooks: tuple[BatchHook | None, ...] = (),
    trace: list[float] | None = None,
    tag: str = "classifier",
) -> list[float]:
    """Adam over shuffled minibatches of AAM-softmax loss. Returns epoch mean losses."""
    params = [p for p in model.parameters() if p.requires_grad]
    optimizer = torch.optim.Adam(params, lr=config.lr)
    loader = DataLoader(
        TensorDataset(x, y), batch_size=config.batch_size, shuffle=True, generator=seeded_rng(derive_seed(seed, "shuffle"))
    )
    losses: list[float] = [] if trace is None else trace
    for epoch in range(config.epochs):
        total, count = 0.0, 0
        for xb, yb in loader:
            for hook in hooks:
                if hook is not None:
                    xb = hook(model, xb, yb)
            model.train()
            _freeze_batchnorm_if_frozen(model)
            loss = aam_softmax_loss(model.cosine_features(model.features(xb)), yb, model.config.aam)
            if not torch.isfinite(loss):
                raise DivergenceError(f"{tag} training produced a non-finite loss in epoch {epoch}", losses)
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            total += float(loss) * len(yb)
            count += len(yb)
        losses.append(total / count)
        log.info(f"{tag} epoch {epoch + 1}/{config.epochs} loss {losses[-1]:.4f}")
    model.eval()
    return losses


def _freeze_batchnorm_if_frozen(model: XVectorClassifier) -> None:
    # encoder frozen by head-only fine-tuning keeps its running statistics
    if not any(p.requires_grad for p in model.encoder.parameters()):
        model.stem.eval()
        model.encoder.eval()


def train_classifier(
    model: XVectorClassifier,
    x: torch.Tensor,
    y: torch.Tensor,
    config: TrainConfig | None = None,
    *,
    seed: int = 0,
    trace: list[float] | None = None,
) -> XVectorClassifier:
    """
    Train a classifier in place with Adam on the AAM-softmax loss.

    Args:
        model: Freshly built classifier
        x: `(N, T)` training waveforms
        y: `(N,)` labels
        config: Optimization settings
        seed: Seed for shuffling and augmentation
        trace: Receives the mean loss of every epoch

    Raises:
        DivergenceError: On a non-finite loss

    Returns:
        The trained model, in eval mode
    """
    config = config or TrainConfig()
    _check_dataset(y)
    augment = _gaussian_hook((0.0, config.augment_sigma), seeded_rng(derive_seed(seed, "augment")))
    _fit(model, x, y, config, seed, hooks=(augment,), trace=trace)
    return model


def fine_tune_gaussian(
    model: XVectorClassifier,
    x: torch.Tensor,
    y: torch.Tensor,
    config: TrainConfig | None = None,
    *,
    sigma_range: tuple[float, float] = (0.0, 0.3),
    scope: Literal["head", "full"] = "full",
    seed: int = 0,
    trace: list[float] | None = None,
) -> XVectorClassifier:
    """
    Fine-tune a copy of a trained classifier on Gaussian-noised inputs.

    Each utterance gets noise with its own sigma drawn from `U(sigma_range)`. A zero
    upper bound adds no noise at all.

    Args:
        model: Trained classifier, left untouched
        x: Training waveforms
        y: Labels
        config: Optimization settings for the fine-tune
        sigma_range: Bounds of the uniform sigma draw
        scope: `full` updates everything, `head` freezes the encoder
        seed: Seed for shuffling and noise
        trace: Receives epoch losses

    Returns:
        The fine-tuned copy
    """
    low, high = sigma_range
    if not 0 <= low <= high:
        raise ValueError("sigma_range must satisfy 0 <= low <= high")

    if scope not in ("head", "full"):
        raise ValueError("scope must be 'head' or 'full'")

    config = config or TrainConfig(epochs=5)
    tuned = copy.deepcopy(model)
    if scope == "head":
        for module in (tuned.extractor, tuned.stem, tuned.encoder):
            for p in module.parameters():
                p.requires_grad_(False)

    noise = _gaussian_hook(sigma_range, seeded_rng(derive_seed(seed, "gaussian-finetune")))
    _fit(tuned, x, y, config, seed, hooks=(noise,), trace=trace, tag=f"gaussian fine-tune ({scope})")
    for p in tuned.parameters():
        p.requires_grad_(True)
    return tuned


def adversarial_train(
    model: XVectorClassifier,
    x: torch.Tensor,
    y: torch.Tensor,
    adv: AdvTrainConfig,
    config: TrainConfig | None = None,
    *,
    seed: int = 0,
    trace: list[float] | None = None,
) -> XVectorClassifier:
    """
    Adversarially train a copy of `model`.

    Every minibatch is replaced by its adversarial version crafted against the current
    parameters (FGSM, or PGD-L-inf with `adv.iterations` steps of `alpha_ratio * eps`).
    With a budget range a fresh epsilon is drawn per update. A zero budget skips the inner
    maximization so the run matches plain training bit for bit.

    Args:
        model: Starting point, left untouched
        x: Training waveforms
        y: Labels
        adv: Inner maximization settings
        config: Optimization settings
        seed: Seed for shuffling, budgets and PGD inits
        trace: Receives epoch losses

    Raises:
        DivergenceError: On a non-finite loss, or when the last epoch loss exceeds
            `adv.max_loss_ratio` times the first (the training failed to converge)

    Returns:
        The adversarially trained copy
    """
    from ..attacks.gradient import fgsm, pgd

    config = config or TrainConfig()
    _check_dataset(y)
    trained = copy.deepcopy(model)
    eps_stream = seeded_rng(derive_seed(seed, "adv-epsilon"))
    init_stream = seeded_rng(derive_seed(seed, "adv-init"))

    def inner_max(current: XVectorClassifier, xb: torch.Tensor, yb: torch.Tensor) -> torch.Tensor:
        eps = adv.draw_epsilon(eps_stream)
        if eps == 0:
            return xb
        current.eval()
        if adv.algorithm == "fgsm":
            result = fgsm(current, xb, yb, eps)
        else:
            result = pgd(
                current, xb, yb, p=math.inf, eps=eps, alpha=adv.alpha_ratio * eps, iterations=adv.iterations,
                restarts=1, generator=init_stream,
            )
        return result.adversarial

    augment = _gaussian_hook((0.0, config.augment_sigma), seeded_rng(derive_seed(seed, "augment")))
    losses = _fit(trained, x, y, config, seed, hooks=(augment, inner_max), trace=trace, tag=f"adversarial ({adv.algorithm})")
    if len(losses) > 1 and losses[-1] > adv.max_loss_ratio * losses[0]:
        raise DivergenceError(f"adversarial training with {adv.algorithm} did not decrease its loss", losses)
    return trained


def _check_dataset(y: torch.Tensor) -> None:
    counts = torch.bincount(y)
    present = counts[counts > 0]
    if len(present) < 2:
        raise ValueError("training needs at least 2 speakers")
    if int(present.min()) < MIN_UTTERANCES:
        raise ValueError(f"every speaker needs at least {MIN_UTTERANCES} training utterances")
