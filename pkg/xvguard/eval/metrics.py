from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np
import torch
from sklearn.linear_model import LogisticRegression
from sklearn.metrics import roc_curve

__all__ = "Calibration", "accuracy", "calibrate", "cosine_score", "eer"

ArrayLike = Sequence[float] | np.ndarray | torch.Tensor


def _as_array(values: ArrayLike) -> np.ndarray:
    if isinstance(values, torch.Tensor):
        values = values.detach().cpu().double().numpy()
    return np.asarray(values, dtype=np.float64).reshape(-1)


def accuracy(predicted: torch.Tensor, labels: torch.Tensor) -> float:
    """Fraction of predictions equal to the labels."""
    if predicted.shape != labels.shape or predicted.numel() == 0:
        raise ValueError("predictions and labels must be non-empty and of equal shape")
    return float((predicted == labels).double().mean())


def cosine_score(e1: torch.Tensor, e2: torch.Tensor) -> torch.Tensor:
    """
    Cosine of the angle between embeddings, row-wise for batches.

    Raises:
        ValueError: If any embedding is the zero vector

    Examples:
        >>> float(cosine_score(torch.tensor([1.0, 0.0]), torch.tensor([0.0, 2.0])))
        0.0
    """
    n1, n2 = torch.linalg.vector_norm(e1, dim=-1), torch.linalg.vector_norm(e2, dim=-1)
    if bool((n1 == 0).any()) or bool((n2 == 0).any()):
        raise ValueError("cosine score is undefined for a zero embedding")
    score = (e1 * e2).sum(dim=-1) / (n1 * n2)
    return score.clamp(-1.0, 1.0)


@dataclass(frozen=True)
class Calibration:
    """Affine map from raw scores to the log-likelihood-ratio scale"""

    a: float
    b: float

    def __post_init__(self) -> None:
        if not self.a > 0:
            raise ValueError("calibration slope must be positive")

    def __call__(self, scores: ArrayLike) -> np.ndarray:
        return self.a * _as_array(scores) + self.b


def calibrate(scores: ArrayLike, labels: ArrayLike) -> Calibration:
    """
    Fit `a * s + b` by linear logistic regression on bona fide trials.

    Both classes are weighted equally so the output is a log-likelihood ratio at equal
    priors. Regularization is effectively off.

    Args:
        scores: Raw trial scores
        labels: 1 for target trials, 0 for non-target trials

    Raises:
        ValueError: If only one class is present or the fitted slope is not positive

    Returns:
        The calibration
    """
    s, y = _as_array(scores), _as_array(labels).astype(int)
    if s.shape != y.shape:
        raise ValueError("scores and labels must have equal length")

    if len(np.unique(y)) != 2:
        raise ValueError("calibration needs both target and non-target trials")

    model = LogisticRegression(C=1e10, class_weight="balanced", max_iter=1000, tol=1e-10)
    model.fit(s.reshape(-1, 1), y)
    a, b = float(model.coef_[0, 0]), float(model.intercept_[0])
    if a <= 0:
        raise ValueError(f"fitted calibration slope {a:.4g} is not positive, scores are anti-correlated")
    return Calibration(a=a, b=b)


def eer(target_scores: ArrayLike, nontarget_scores: ArrayLike, *, clip: bool = True) -> float:
    """
    Equal error rate in percent.

    The miss and false-alarm rates are taken at every distinct threshold and the ROC is
    linearly interpolated between adjacent operating points where the two rates cross.

    Args:
        target_scores: Scores of same-speaker trials
        nontarget_scores: Scores of different-speaker trials
        clip: Report at most 50, the error of a scorer that ignores its input

    Raises:
        ValueError: If either list is empty

    Returns:
        EER in [0, 100], in [0, 50] when clipped

    Examples:
        >>> eer([0.9, 0.8], [0.1, 0.2])
        0.0
        >>> eer([0.5, 0.4], [0.5, 0.4])
        50.0
    """
    tar, non = _as_array(target_scores), _as_array(nontarget_scores)
    if tar.size == 0 or non.size == 0:
        raise ValueError("EER needs both target and non-target scores")

    labels = np.concatenate([np.ones_like(tar), np.zeros_like(non)])
    fpr, tpr, _ = roc_curve(labels, np.concatenate([tar, non]), drop_intermediate=False)
    fnr = 1.0 - tpr
    gap = fnr - fpr
    k = int(np.argmax(gap <= 0))
    if gap[k] == 0:
        rate = fpr[k]
    else:
        t = gap[k - 1] / (gap[k - 1] - gap[k])
        rate = fpr[k - 1] + t * (fpr[k] - fpr[k - 1])
    value = float(rate * 100.0)
    return min(value, 50.0) if clip else value
