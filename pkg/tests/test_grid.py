import json
import math

import pytest
import torch

from xvguard.core import argmax
from xvguard.data import LabeledAudio
from xvguard.defenses import build_chain
from xvguard.errors import ConfigError, MissingArtifactError
from xvguard.eval import CLEAN, EvalReport, ReportRow, accuracy_grid, craft_attacks, load_report, universal_delta
from xvguard.types import Algorithm, AttackConfig, SmoothingConfig, UniversalConfig, Waveform

FGSM = AttackConfig(algorithm=Algorithm.FGSM, epsilon=0.01)
BIM = AttackConfig(algorithm=Algorithm.BIM, epsilon=0.01, iterations=7)


@pytest.fixture
def data(tiny_model):
    generator = torch.Generator().manual_seed(5)
    x = 0.3 * torch.rand(4, 8000, generator=generator) - 0.15
    with torch.no_grad():
        labels = argmax(tiny_model(x))
    return LabeledAudio(
        utt_ids=tuple(f"utt{i}" for i in range(4)),
        waveforms=tuple(Waveform(samples=row) for row in x),
        labels=labels,
    )


def _row(**overrides):
    values = dict(
        defense="none", attack=CLEAN, algorithm="none", norm="none", epsilon=0.0, mode="bpda",
        metric="accuracy", value=1.0, n_utterances=4, failures=0, seed=0,
    )
    return ReportRow(**{**values, **overrides})


def test_clean_row_comes_first(tiny_model, data):
    """Test the unattacked cell is always present and exact on self-labeled data."""
    report = accuracy_grid({"none": tiny_model}, [FGSM], data)

    assert report.attacks == [CLEAN, FGSM.id]
    clean = report.get("none", CLEAN)
    assert clean.value == 1.0
    assert clean.algorithm == "none" and clean.n_utterances == 4
    assert report.get("none", FGSM.id).norm == "linf"
    assert "wall_time" in report.metadata


def test_attacks_do_not_raise_accuracy(tiny_model, data):
    """Test attacked accuracy never beats the clean accuracy of self-labeled data."""
    report = accuracy_grid({"none": tiny_model}, [FGSM, BIM], data, seed=3)

    for attack in (FGSM, BIM):
        assert report.value("none", attack.id) <= report.value("none", CLEAN)


def test_cells_are_independent_of_jobs(tiny_model, data):
    """Test per-utterance streams make results identical for any worker count."""
    chains = {"smoothing": build_chain(["smoothing"], tiny_model, smoothing=SmoothingConfig(sigma=0.02))}

    serial = accuracy_grid(chains, [FGSM], data, seed=1, jobs=1)
    parallel = accuracy_grid(chains, [FGSM], data, seed=1, jobs=2)

    assert [r.value for r in serial.rows] == [r.value for r in parallel.rows]


def test_duplicate_attack_ids(tiny_model, data):
    """Test attack ids must be unique."""
    with pytest.raises(ConfigError, match="unique"):
        accuracy_grid({"none": tiny_model}, [FGSM, FGSM], data)


def test_reused_attacks_match_crafted_ones(tiny_model, data):
    """Test scoring persisted attacks gives the cells the grid crafts itself."""
    crafted = craft_attacks(tiny_model, FGSM, data, seed=2, defense="none")
    batch = torch.stack([adversarial for adversarial, _ in crafted])

    report = accuracy_grid(
        {"none": tiny_model, "copy": tiny_model}, [FGSM], data, seed=2, reuse={"copy": {FGSM.id: batch}}
    )

    assert report.value("copy", FGSM.id) == report.value("none", FGSM.id)
    assert all(not info["failed"] for _, info in crafted)
    assert all(info["linf"] <= FGSM.epsilon + 1e-6 for _, info in crafted)


def test_reuse_shape_is_checked(tiny_model, data):
    """Test a persisted batch must cover every utterance."""
    with pytest.raises(ConfigError, match="expected 4"):
        accuracy_grid({"none": tiny_model}, [FGSM], data, reuse={"none": {FGSM.id: torch.zeros(3, 8000)}})


def test_universal_needs_a_delta(tiny_model, data):
    """Test crafting a universal attack without its perturbation fails."""
    universal = AttackConfig(algorithm=Algorithm.UNIVERSAL, epsilon=0.1, p=2)

    with pytest.raises(ConfigError, match="universal"):
        craft_attacks(tiny_model, universal, data)


def test_universal_delta_is_cached(tiny_model, data):
    """Test the universal search runs once per surrogate and setting."""
    universal = AttackConfig(
        algorithm=Algorithm.UNIVERSAL, epsilon=0.1, p=2, universal=UniversalConfig(max_epochs=1, steps_per_radius=2, radius_levels=2)
    )
    cache: dict = {}

    first = universal_delta(tiny_model, universal, data, seed=0, cache=cache)
    second = universal_delta(tiny_model, universal, data, seed=0, cache=cache)

    assert first is second
    assert len(cache) == 1
    assert torch.linalg.vector_norm(first) <= 0.1 + 1e-5


def _reversed(data: LabeledAudio) -> LabeledAudio:
    return LabeledAudio(data.utt_ids[::-1], data.waveforms[::-1], data.labels.flip(0))


def test_universal_cells_ignore_utterance_order(tiny_model, data):
    """Test the universal perturbation and its cells do not depend on utterance order."""
    universal = AttackConfig(
        algorithm=Algorithm.UNIVERSAL, epsilon=0.15, universal=UniversalConfig(max_epochs=2, steps_per_radius=2, radius_levels=2)
    )
    flipped = _reversed(data)

    forward = universal_delta(tiny_model, universal, data, seed=0)
    backward = universal_delta(tiny_model, universal, flipped, seed=0)
    assert torch.equal(forward, backward)

    report = accuracy_grid({"none": tiny_model}, [universal], data, surrogate=tiny_model)
    flipped_report = accuracy_grid({"none": tiny_model}, [universal], flipped, surrogate=tiny_model)
    assert report.value("none", universal.id) == flipped_report.value("none", universal.id)


def test_sorted_by_id_keeps_labels_aligned(data):
    """Test reordering by utterance id moves labels and waveforms together."""
    ordered = _reversed(data).sorted_by_id()

    assert ordered.utt_ids == data.utt_ids
    assert torch.equal(ordered.labels, data.labels)
    assert torch.equal(ordered.batch(), data.batch())


def test_grid_with_universal_attack(tiny_model, data):
    """Test universal cells are scored with a perturbation from the surrogate."""
    universal = AttackConfig(
        algorithm=Algorithm.UNIVERSAL, epsilon=0.1, p=2, universal=UniversalConfig(max_epochs=1, steps_per_radius=2, radius_levels=2)
    )

    report = accuracy_grid({"none": tiny_model}, [universal], data, surrogate=tiny_model, surrogate_data=data)

    assert 0.0 <= report.value("none", universal.id) <= 1.0
    assert report.get("none", universal.id).norm == "l2"


def test_report_rejects_duplicate_cells():
    """Test a (defense, attack, metric) cell is written once."""
    report = EvalReport(rows=[_row()])
    with pytest.raises(ValueError, match="duplicate"):
        report.add(_row(value=0.5))
    report.add(_row(metric="eer", value=12.5))
    assert report.value("none", CLEAN, "eer") == 12.5


def test_report_round_trip(tmp_path):
    """Test CSV and JSON reports load back to the same rows."""
    report = EvalReport(
        rows=[_row(), _row(attack="fgsm-linf-0.001", algorithm="fgsm", norm="linf", epsilon=0.001, value=0.25, failures=1)],
        metadata={"model_hash": "abc", "seed": 0},
    )

    from_json = load_report(report.to_json(tmp_path / "report.json"))
    from_csv = load_report(report.to_csv(tmp_path / "report.csv"))

    assert from_json.rows == report.rows
    assert from_json.metadata == report.metadata
    assert from_csv.rows == report.rows


def test_json_report_layout(tmp_path):
    """Test rows are nested by defense next to metadata and the schema version."""
    document = json.loads(EvalReport(rows=[_row()]).to_json(tmp_path / "r.json").read_text())

    assert document["schema_version"] == 1
    assert set(document["defenses"]) == {"none"}
    assert "defense" not in document["defenses"]["none"][0]


def test_load_report_errors(tmp_path):
    """Test missing files and foreign schema versions."""
    with pytest.raises(MissingArtifactError):
        load_report(tmp_path / "absent.json")

    path = tmp_path / "old.json"
    path.write_text(json.dumps({"schema_version": 0, "defenses": {}}))
    with pytest.raises(ValueError, match="schema version"):
        load_report(path)


def test_missing_cell():
    """Test looking up an absent cell."""
    with pytest.raises(KeyError):
        EvalReport().value("none", CLEAN)
    assert math.isclose(EvalReport(rows=[_row(value=0.5)]).value("none", CLEAN), 0.5)
