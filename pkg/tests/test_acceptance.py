"""
Trend checks on the 40-speaker toy task.

These train every model from scratch and take tens of minutes on a CPU, run them with
`pytest -m slow`.
"""

import json
from pathlib import Path

import pytest
import torch

from xvguard.cli import main
from xvguard.core import argmax, derive_seed
from xvguard.data import generate_toy_dataset, load_split
from xvguard.defenses import DefenseModels, VaeConfig, VocoderConfig, build_chain, train_vae, train_vocoder
from xvguard.eval import CLEAN, accuracy_grid, craft_attacks
from xvguard.model import TrainConfig, XVectorConfig, build_classifier, fine_tune_gaussian, train_classifier
from xvguard.types import Algorithm, AttackConfig, CwConfig, SmoothingConfig, ThreatMode, UniversalConfig

pytestmark = pytest.mark.slow

CONFIGS = Path(__file__).parent.parent / "configs"

FGSM = AttackConfig(algorithm=Algorithm.FGSM, epsilon=0.01)
BIM = AttackConfig(algorithm=Algorithm.BIM, epsilon=0.01, iterations=7)


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    manifest = generate_toy_dataset(
        tmp_path_factory.mktemp("toy40"), n_speakers=40, utts_per_speaker=20, duration_s=1.0, seed=0, jobs=4
    )
    return {split: load_split(manifest, split) for split in ("train", "enroll", "test")}


def _train(corpus, name):
    train = corpus["train"]
    model = build_classifier(XVectorConfig(n_speakers=40), derive_seed(0, name))
    train_classifier(model, train.batch(), train.labels, TrainConfig(epochs=30), seed=derive_seed(0, name))
    return model.eval()


@pytest.fixture(scope="module")
def base(corpus):
    return _train(corpus, "classifier")


@pytest.fixture(scope="module")
def evaluation(corpus):
    return corpus["test"].subset(100)


def test_attack_strength_ordering(base, evaluation):
    """Test iterative attacks beat single-step ones at the same budget."""
    report = accuracy_grid({"none": base}, [FGSM, BIM], evaluation, seed=0)
    clean, fgsm, bim = (report.value("none", a) for a in (CLEAN, FGSM.id, BIM.id))

    assert clean >= 0.95
    assert bim <= 0.10
    assert fgsm >= bim + 0.20
    assert clean >= fgsm


def test_cw_succeeds(base, evaluation):
    """Test CW finds a misclassifying perturbation for nearly every utterance."""
    cw = AttackConfig(algorithm=Algorithm.CW_L2, cw=CwConfig(kappa=0.0, lr=1e-3, inner_iters=10, outer_iters=5))

    crafted = craft_attacks(base, cw, evaluation, seed=0)
    adversarial = torch.stack([x for x, _ in crafted])
    with torch.no_grad():
        fooled = argmax(base(adversarial)) != evaluation.labels

    assert sum(info["success"] for _, info in crafted) >= 0.9 * len(crafted)
    assert fooled.double().mean() >= 0.9


def test_smoothing_recovers_accuracy(base, corpus, evaluation):
    """Test smoothing a noise-tuned model restores accuracy under BIM."""
    train = corpus["train"]
    tuned = fine_tune_gaussian(
        base, train.batch(), train.labels, TrainConfig(epochs=10), sigma_range=(0.0, 0.3), seed=1
    ).eval()
    chains = {
        "base": base,
        "tuned": tuned,
        "smoothed": build_chain(["smoothing"], tuned, smoothing=SmoothingConfig(sigma=0.1)),
    }

    report = accuracy_grid(chains, [BIM], evaluation, seed=0)

    assert report.value("base", BIM.id) <= 0.10
    assert report.value("smoothed", BIM.id) >= 0.6 * report.value("smoothed", CLEAN)
    assert report.value("smoothed", CLEAN) >= report.value("tuned", CLEAN) - 0.10


def test_universal_transfer_is_weak(base, corpus, evaluation):
    """Test a universal perturbation from an independent surrogate barely hurts the victim."""
    surrogate = _train(corpus, "surrogate")
    universal = AttackConfig(algorithm=Algorithm.UNIVERSAL, epsilon=0.3, p=2, universal=UniversalConfig(fool_rate=0.8))

    report = accuracy_grid(
        {"victim": base}, [universal], evaluation, seed=0, surrogate=surrogate, surrogate_data=corpus["enroll"]
    )

    assert report.value("victim", universal.id) >= report.value("victim", CLEAN) - 0.10


def test_vocoder_under_bpda(base, corpus, evaluation):
    """Test vocoder resynthesis keeps benign accuracy and resists BPDA BIM."""
    vocoder = train_vocoder(corpus["train"].batch(), VocoderConfig(epochs=30), seed=0)
    chains = {"none": base, "vocoder": build_chain(["vocoder"], base, DefenseModels(vocoder=vocoder))}

    report = accuracy_grid(chains, [BIM], evaluation, seed=0)

    assert report.value("vocoder", CLEAN) >= 0.9 * report.value("none", CLEAN)
    assert report.value("vocoder", BIM.id) >= 0.8 * report.value("vocoder", CLEAN)


def test_exact_gradients_beat_bpda_on_vae(base, corpus, evaluation):
    """Test the end-to-end attack is at least as strong as BPDA against the VAE."""
    vae = train_vae(corpus["train"].batch(), VaeConfig(epochs=20), extractor=base.extractor, seed=0)
    weak = BIM.with_epsilon(0.001)
    chains = {
        mode.value: build_chain(["vae"], base, DefenseModels(vae=vae), mode=mode) for mode in ThreatMode
    }

    report = accuracy_grid(chains, [weak], evaluation, seed=0)

    assert report.value("e2ed", weak.id) <= report.value("bpda", weak.id)


def test_smoke_pipeline_is_deterministic(tmp_path):
    """Test two runs of the smoke config produce the same report."""
    documents = []
    for name in ("a", "b"):
        out = tmp_path / name
        for verb in ("generate", "train", "attack", "evaluate"):
            assert main([verb, "--config", str(CONFIGS / "smoke.toml"), "--out", str(out)]) == 0
        document = json.loads((out / "reports" / "report.json").read_text())
        document["metadata"].pop("wall_time")
        documents.append(document)

    assert documents[0] == documents[1]
