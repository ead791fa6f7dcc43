import pytest

from xvguard.cli import cmd_report
from xvguard.eval import CLEAN, EvalReport, ReportRow, render_report, render_table


def _row(defense, attack, value, *, epsilon=0.0, metric="accuracy", algorithm="fgsm"):
    return ReportRow(
        defense=defense,
        attack=attack,
        algorithm="none" if attack == CLEAN else algorithm,
        norm="none" if attack == CLEAN else "linf",
        epsilon=epsilon,
        mode="bpda",
        metric=metric,
        value=value,
        n_utterances=10,
        failures=0,
        seed=0,
    )


@pytest.fixture
def report():
    rows = [
        _row("none", "fgsm-linf-0.01", 0.1, epsilon=0.01),
        _row("none", CLEAN, 0.9),
        _row("none", "fgsm-linf-0.001", 0.5, epsilon=0.001),
        _row("vocoder", CLEAN, 0.85),
        _row("vocoder", "fgsm-linf-0.001", 0.8, epsilon=0.001),
        _row("none", CLEAN, 2.5, metric="eer"),
    ]
    return EvalReport(rows=rows)


def test_table_layout(report):
    """Test the clean column leads and missing cells are dashed."""
    lines = render_table(report).splitlines()

    assert lines[0].split(" | ") == ["defense", "clean", "fgsm-linf-0.01", "fgsm-linf-0.001"]
    assert lines[2].split() == ["none", "|", "90.0", "|", "10.0", "|", "50.0"]
    assert lines[3].split() == ["vocoder", "|", "85.0", "|", "-", "|", "80.0"]
    assert len({len(line) for line in lines}) == 1


def test_eer_table(report):
    """Test EERs print as stored."""
    assert render_table(report, "eer").splitlines()[-1].split() == ["none", "|", "2.50"]


def test_render_report_files(report, tmp_path):
    """Test every artifact lands in the output directory."""
    written = render_report(report, tmp_path / "out")

    assert set(written) == {"accuracy_table", "eer_table", "curves", "summary"}
    assert all(path.is_file() and path.stat().st_size > 0 for path in written.values())
    assert written["curves"].read_bytes().startswith(b"\x89PNG")


def test_render_without_eer(tmp_path):
    """Test a report without verification rows skips the EER table."""
    written = render_report(EvalReport(rows=[_row("none", CLEAN, 1.0)]), tmp_path)
    assert "eer_table" not in written


def test_cmd_report(report, tmp_path):
    """Test the report command renders next to the report file."""
    path = report.to_json(tmp_path / "reports" / "report.json")

    table = cmd_report(path)

    assert table == render_table(report)
    assert (tmp_path / "reports" / "rendered" / "accuracy.txt").read_text() == table + "\n"
