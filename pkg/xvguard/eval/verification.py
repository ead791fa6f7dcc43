from __future__ import annotations

from collections.abc import Mapping
from dataclasses import dataclass
from typing import Literal

import numpy as np
import torch
from torch import nn

from ..attacks import cosine_objective, run_attack
from ..core import derive_seed, seeded_rng
from ..data import Manifest
from ..defenses.chain import as_chain
from ..errors import ConfigError, ManifestError
from ..logger import get_logger
from ..types import SAMPLE_RATE, Algorithm, AttackConfig
from .metrics import Calibration, calibrate, cosine_score, eer

__all__ = "Trial", "TrialList", "VerificationResult", "make_trials", "verification_eval"

TEST_SECONDS = 5.0
"""Test-side duration cap"""

log = get_logger("verification")


@dataclass(frozen=True)
class Trial:
    enroll: str
    test: str
    target: bool


@dataclass(frozen=True)
class TrialList:
    """Enrollment/test utterance pairs with same-speaker flags"""

    trials: tuple[Trial, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "trials", tuple(self.trials))
        if not self.trials:
            raise ValueError("trial list is empty")

        flags = {t.target for t in self.trials}
        if flags != {True, False}:
            raise ValueError("trial list needs both target and non-target trials")

    def __len__(self) -> int:
        return len(self.trials)

    def validate(self, manifest: Manifest) -> None:
        """
        Raises:
            ManifestError: If a trial references an utterance outside the manifest
        """
        for trial in self.trials:
            for utt_id in (trial.enroll, trial.test):
                if utt_id not in manifest:
                    raise ManifestError(f"trial references unknown utterance {utt_id!r}")

    @property
    def labels(self) -> np.ndarray:
        return np.array([int(t.target) for t in self.trials])


def make_trials(manifest: Manifest, *, nontargets_per_test: int = 1, seed: int = 0) -> TrialList:
    """
    Pair every test utterance with enrollment utterances.

    Each test utterance gets one target trial against an enrollment utterance of its
    speaker and `nontargets_per_test` trials against enrollment utterances of other
    speakers, all picked with a seeded stream.

    Args:
        manifest: Manifest with `enroll` and `test` splits
        nontargets_per_test: Different-speaker trials per test utterance
        seed: Pairing seed

    Raises:
        ManifestError: If a test speaker has no enrollment utterance
    """
    enroll: dict[str, list[str]] = {}
    for entry in manifest.split("enroll"):
        enroll.setdefault(entry.speaker, []).append(entry.utt_id)

    speakers = sorted(enroll)
    if len(speakers) < 2:
        raise ManifestError("verification trials need enrollment audio of at least two speakers")

    stream = seeded_rng(derive_seed(seed, "trials"))
    trials: list[Trial] = []
    for entry in manifest.split("test"):
        own = enroll.get(entry.speaker)
        if not own:
            raise ManifestError(f"speaker {entry.speaker!r} has no enrollment utterance")
        pick = int(torch.randint(len(own), (), generator=stream))
        trials.append(Trial(enroll=own[pick], test=entry.utt_id, target=True))

        others = [s for s in speakers if s != entry.speaker]
        for _ in range(nontargets_per_test):
            speaker = others[int(torch.randint(len(others), (), generator=stream))]
            utts = enroll[speaker]
            trials.append(Trial(enroll=utts[int(torch.randint(len(utts), (), generator=stream))], test=entry.utt_id, target=False))
    return TrialList(tuple(trials))


@dataclass(frozen=True, eq=False)
class VerificationResult:
    eer: float
    """Percent, over calibrated scores"""
    calibration: Calibration
    scores: np.ndarray
    """Calibrated scores in trial order"""
    failures: int


def verification_eval(
    target: nn.Module,
    trials: TrialList,
    manifest: Manifest,
    audio: Mapping[str, torch.Tensor],
    *,
    attack: AttackConfig | None = None,
    objective: Literal["cross_entropy", "cosine"] = "cross_entropy",
    calibration: Calibration | None = None,
    seed: int = 0,
    max_test_seconds: float = TEST_SECONDS,
) -> VerificationResult:
    """
    Verification EER with the attack applied to the test side only.

    Enrollment embeddings are computed once from benign audio. Test utterances are
    cropped to `max_test_seconds` and, when `attack` is given, perturbed either against
    the identification head (`cross_entropy`, once per test utterance) or against the
    trial score itself (`cosine`, once per trial). Scores are cosine similarities mapped
    by a calibration fitted on the benign trials.

    Args:
        target: Classifier or defense chain
        trials: Trial list
        manifest: Manifest the trials refer to
        audio: Utterance id to samples
        attack: Test-side attack, none for bona fide scoring
        objective: Attack loss
        calibration: Calibration of bona fide scores, fitted here when omitted
        seed: Run seed
        max_test_seconds: Test duration cap

    Raises:
        ConfigError: For attacks that can't target verification with the chosen loss
        ManifestError: If trials reference unknown utterances

    Returns:
        EER, calibration and calibrated scores
    """
    trials.validate(manifest)
    chain = as_chain(target)
    mode = chain.mode
    if attack is not None:
        if attack.algorithm is Algorithm.UNIVERSAL:
            raise ConfigError("universal perturbations are evaluated on identification only")
        if objective == "cosine" and attack.algorithm is Algorithm.CW_L2:
            raise ConfigError("the cosine objective drives budgeted attacks (fgsm, bim, pgd) only")
        chain.check_mode(mode)

    def embed(utt_id: str, x: torch.Tensor, tag: str) -> torch.Tensor:
        stream = seeded_rng(derive_seed(seed, "verify", tag, utt_id))
        with torch.no_grad():
            return chain.attack_embeddings(x.unsqueeze(0) if x.ndim == 1 else x, mode, stream)[0]

    enroll = {utt_id: embed(utt_id, audio[utt_id], "enroll") for utt_id in dict.fromkeys(t.enroll for t in trials.trials)}
    limit = int(max_test_seconds * SAMPLE_RATE)
    tests = {utt_id: audio[utt_id][:limit] for utt_id in dict.fromkeys(t.test for t in trials.trials)}

    benign: dict[str, torch.Tensor] = {}
    if calibration is None or attack is None:
        benign = {utt_id: embed(utt_id, x, "clean") for utt_id, x in tests.items()}
    if calibration is None:
        bona_fide = [float(cosine_score(enroll[t.enroll], benign[t.test])) for t in trials.trials]
        try:
            calibration = calibrate(bona_fide, trials.labels)
        except ValueError as exc:
            # identity keeps the ROC, so the EER is unaffected
            log.warning(f"calibration skipped, scoring raw cosines ({exc})")
            calibration = Calibration(a=1.0, b=0.0)

    failures = 0
    attack_id = "clean" if attack is None else attack.id

    def perturb(x: torch.Tensor, label: int, key: str, trial: Trial | None = None) -> torch.Tensor:
        nonlocal failures
        if attack is None:
            return x
        stream = seeded_rng(derive_seed(seed, "verify", attack_id, key))
        loss = None
        if trial is not None:
            loss = cosine_objective(
                lambda z: chain.attack_embeddings(z, mode, stream), enroll[trial.enroll].unsqueeze(0), torch.tensor([trial.target])
            )
        try:
            return run_attack(attack, chain, x.unsqueeze(0), label, generator=stream, mode=mode, objective=loss).adversarial[0]
        except (RuntimeError, ValueError) as exc:
            failures += 1
            log.warning(f"verification {attack_id}: attack on {key} failed, scored unperturbed ({exc})")
            return x

    scores: list[float] = []
    cached = dict(benign) if attack is None else {}
    for i, trial in enumerate(trials.trials):
        label = manifest.label_of(manifest[trial.test].speaker)
        if objective == "cosine" and attack is not None:
            adversarial = perturb(tests[trial.test], label, f"{trial.test}#{i}", trial)
            test_embedding = embed(f"{trial.test}#{i}", adversarial, attack_id)
        else:
            if trial.test not in cached:
                cached[trial.test] = embed(trial.test, perturb(tests[trial.test], label, trial.test), attack_id)
            test_embedding = cached[trial.test]
        scores.append(float(cosine_score(enroll[trial.enroll], test_embedding)))

    calibrated = calibration(scores)
    labels = trials.labels
    value = eer(calibrated[labels == 1], calibrated[labels == 0])
    log.info(f"verification {attack_id}: EER {value:.2f}% over {len(trials)} trials")
    return VerificationResult(eer=value, calibration=calibration, scores=calibrated, failures=failures)
