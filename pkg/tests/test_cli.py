import json

import pytest

from xvguard.cli import main
from xvguard.eval import CLEAN, load_report

TINY_RUN = """
seed = 0

[data]
n_speakers = 3
utts_per_speaker = 6
duration_s = 0.5
max_eval_utterances = 4

[model]
n_speakers = 3
widths = [2, 4, 4, 4]
embed_dim = 16

[training.classifier]
epochs = 1
batch_size = 4

[training.vocoder]
epochs = 1
channels = 4
layers = 2
dilation_cycle = 2
batch_size = 4
segment_samples = 4000

[[attacks]]
algorithm = "fgsm"
epsilons = [0.01]

[[defenses]]
name = "none"

[[defenses]]
name = "vocoder"
stages = ["vocoder"]

[[defenses]]
name = "vocoder_transfer"
stages = ["vocoder"]
attack_source = "none"

[grid.verification]
defenses = ["none"]
"""


CLEAN_RUN = """
[data]
n_speakers = 3
utts_per_speaker = 6
duration_s = 0.5

[model]
n_speakers = 3
widths = [2, 4, 4, 4]
embed_dim = 16

[training.classifier]
epochs = 1
batch_size = 4
"""


def _write(tmp_path, text, name="run.toml"):
    path = tmp_path / name
    path.write_text(text)
    return path


@pytest.fixture(scope="module")
def run(tmp_path_factory):
    """Every command once over a three-speaker corpus."""
    root = tmp_path_factory.mktemp("cli")
    config = _write(root, TINY_RUN)
    out = root / "run"
    codes = {verb: main([verb, "--config", str(config), "--out", str(out)]) for verb in ("generate", "train", "attack", "evaluate")}
    codes["report"] = main(["report", "--report", str(out / "reports" / "report.json")])
    return out, codes


def test_commands_succeed(run):
    """Test every verb exits cleanly."""
    _, codes = run
    assert codes == {"generate": 0, "train": 0, "attack": 0, "evaluate": 0, "report": 0}


def test_artifact_layout(run):
    """Test the run directory holds data, checkpoints, attacks and reports."""
    out, _ = run
    assert (out / "data" / "manifest.csv").is_file()
    assert {p.name for p in (out / "checkpoints").iterdir()} == {"classifier-base.pt", "vocoder.pt", "training.json"}
    assert (out / "reports" / "rendered" / "accuracy.txt").is_file()
    assert (out / "reports" / "rendered" / "accuracy_vs_epsilon.png").is_file()
    assert not (out / "attacks" / "vocoder_transfer").exists()


def test_training_summary(run):
    """Test loss traces and provenance are recorded."""
    out, _ = run
    summary = json.loads((out / "checkpoints" / "training.json").read_text())

    assert set(summary["traces"]) == {"classifier", "vocoder"}
    assert len(summary["traces"]["vocoder"]) == 2
    assert {"config_hash", "model_hash", "seed", "version"} <= set(summary)


def test_attack_sidecars(run):
    """Test each adversarial WAV carries its chain and realized norms."""
    out, _ = run
    sidecars = sorted((out / "attacks" / "none" / "fgsm-linf-0.01").glob("*.json"))

    assert len(sidecars) == 4
    for sidecar in sidecars:
        info = json.loads(sidecar.read_text())
        assert sidecar.with_suffix(".wav").is_file()
        assert info["chain_id"] == "none"
        assert info["linf"] <= 0.01 + 1e-6
        assert info["failed"] is False


def test_report_cells(run):
    """Test accuracy cells for every defense and the verification EERs."""
    out, _ = run
    report = load_report(out / "reports" / "report.json")

    assert report.defenses == ["none", "vocoder", "vocoder_transfer"]
    for defense in report.defenses:
        assert 0.0 <= report.value(defense, CLEAN) <= 1.0
        assert 0.0 <= report.value(defense, "fgsm-linf-0.01") <= 1.0
    assert 0.0 <= report.value("none", CLEAN, "eer") <= 50.0
    assert report.get("none", "fgsm-linf-0.01", "eer") is not None
    assert report.metadata["model_hash"]


def test_evaluate_prints_table(run, capsys):
    """Test the evaluate verb prints the accuracy table."""
    out, _ = run
    config = out.parent / "run.toml"

    assert main(["evaluate", "--config", str(config), "--out", str(out)]) == 0
    assert capsys.readouterr().out.splitlines()[0].startswith("defense")


def test_clean_only_run(tmp_path):
    """Test a run without attacks reports only clean cells."""
    config = _write(tmp_path, CLEAN_RUN)
    out = tmp_path / "run"

    for verb in ("generate", "train", "attack", "evaluate"):
        assert main([verb, "--config", str(config), "--out", str(out)]) == 0

    report = load_report(out / "reports" / "report.json")
    assert report.attacks == [CLEAN]
    assert report.defenses == ["none"]


def test_missing_config(tmp_path, capsys):
    """Test a missing config file exits with 1 and a JSON error."""
    assert main(["train", "--config", str(tmp_path / "absent.toml")]) == 1

    error = json.loads(capsys.readouterr().err.strip())
    assert error["error"] == "MissingArtifactError"
    assert "absent.toml" in error["message"]


def test_invalid_config(tmp_path, capsys):
    """Test configuration errors exit with 2."""
    config = _write(tmp_path, "seed = 0\n[data]\nspeakers = 4\n")

    assert main(["generate", "--config", str(config)]) == 2
    error = json.loads(capsys.readouterr().err.strip())
    assert error["error"] == "ConfigError"
    assert "data.speakers" in error["message"]


def test_attack_before_training(tmp_path, capsys):
    """Test commands name the step that produces a missing artifact."""
    config = _write(tmp_path, TINY_RUN)

    assert main(["attack", "--config", str(config), "--out", str(tmp_path / "run")]) == 1
    assert "xvguard generate" in json.loads(capsys.readouterr().err.strip())["message"]
