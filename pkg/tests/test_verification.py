from collections import Counter
from pathlib import Path

import pytest
import torch

from xvguard.data import Manifest, ManifestEntry
from xvguard.dsp import load_waveform
from xvguard.errors import ConfigError, ManifestError
from xvguard.eval import Calibration, Trial, TrialList, make_trials, verification_eval
from xvguard.types import Algorithm, AttackConfig, CwConfig

FGSM = AttackConfig(algorithm=Algorithm.FGSM, epsilon=0.001)


@pytest.fixture(scope="module")
def trials(toy_corpus):
    _, manifest = toy_corpus
    return make_trials(manifest, nontargets_per_test=1, seed=0)


@pytest.fixture(scope="module")
def audio(toy_corpus):
    _, manifest = toy_corpus
    return {entry.utt_id: load_waveform(entry.path).samples for entry in manifest}


def test_trial_layout(toy_corpus, trials):
    """Test one target and the requested non-targets per test utterance."""
    _, manifest = toy_corpus
    speaker = {entry.utt_id: entry.speaker for entry in manifest}

    assert len(trials) == 2 * len(manifest.split("test"))
    assert Counter(t.test for t in trials.trials if t.target) == Counter(e.utt_id for e in manifest.split("test"))
    for trial in trials.trials:
        assert manifest[trial.enroll].split == "enroll"
        assert (speaker[trial.enroll] == speaker[trial.test]) is trial.target


def test_trials_are_seeded(toy_corpus, trials):
    """Test equal seeds pair identically."""
    _, manifest = toy_corpus
    assert make_trials(manifest, nontargets_per_test=1, seed=0) == trials
    assert len(make_trials(manifest, nontargets_per_test=3, seed=0)) == 4 * len(manifest.split("test"))


def test_trials_need_two_enrolled_speakers():
    """Test pairing fails without a non-target speaker."""
    entries = [
        ManifestEntry("a1", Path("a1.wav"), "a", "train"),
        ManifestEntry("b1", Path("b1.wav"), "b", "train"),
        ManifestEntry("a2", Path("a2.wav"), "a", "enroll"),
        ManifestEntry("a3", Path("a3.wav"), "a", "test"),
    ]
    with pytest.raises(ManifestError, match="two speakers"):
        make_trials(Manifest(tuple(entries)))


def test_trial_list_validation(toy_corpus):
    """Test empty, one-sided and dangling trial lists."""
    _, manifest = toy_corpus
    with pytest.raises(ValueError):
        TrialList(())

    with pytest.raises(ValueError, match="non-target"):
        TrialList((Trial("x", "y", True),))

    dangling = TrialList((Trial("nope", "spk0_utt000", True), Trial("spk1_utt009", "spk0_utt000", False)))
    with pytest.raises(ManifestError, match="nope"):
        dangling.validate(manifest)


def test_clean_verification(tiny_model, toy_corpus, trials, audio):
    """Test bona fide scoring yields a bounded EER and one score per trial."""
    _, manifest = toy_corpus

    result = verification_eval(tiny_model, trials, manifest, audio, seed=0)

    assert 0.0 <= result.eer <= 50.0
    assert result.scores.shape == (len(trials),)
    assert result.failures == 0
    assert result.calibration.a > 0


def test_attacked_verification(tiny_model, toy_corpus, trials, audio):
    """Test test-side attacks under both objectives reuse the bona fide calibration."""
    _, manifest = toy_corpus
    calibration = Calibration(a=1.0, b=0.0)

    for objective in ("cross_entropy", "cosine"):
        result = verification_eval(
            tiny_model, trials, manifest, audio, attack=FGSM, objective=objective, calibration=calibration, seed=0
        )
        assert result.calibration is calibration
        assert result.failures == 0
        assert 0.0 <= result.eer <= 50.0


def test_attacks_leave_enrollment_audio_alone(tiny_model, toy_corpus, trials, audio):
    """Test the enrollment samples are bit-identical before and after attacked scoring."""
    _, manifest = toy_corpus
    pgd = AttackConfig(algorithm=Algorithm.PGD, epsilon=0.01, iterations=3)
    enrolled = {t.enroll for t in trials.trials}
    before = {utt_id: audio[utt_id].clone() for utt_id in enrolled}

    for objective in ("cross_entropy", "cosine"):
        verification_eval(tiny_model, trials, manifest, audio, attack=pgd, objective=objective, seed=0)

    assert all(torch.equal(audio[utt_id], before[utt_id]) for utt_id in enrolled)


def test_unsupported_attacks(tiny_model, toy_corpus, trials, audio):
    """Test universal attacks and CW under the cosine loss are refused."""
    _, manifest = toy_corpus
    universal = AttackConfig(algorithm=Algorithm.UNIVERSAL, epsilon=0.1)
    cw = AttackConfig(algorithm=Algorithm.CW_L2, cw=CwConfig())

    with pytest.raises(ConfigError, match="identification"):
        verification_eval(tiny_model, trials, manifest, audio, attack=universal)

    with pytest.raises(ConfigError, match="cosine"):
        verification_eval(tiny_model, trials, manifest, audio, attack=cw, objective="cosine")
