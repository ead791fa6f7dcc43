"""Text tables and figures rendered from an evaluation report."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

from matplotlib import pyplot  # noqa: E402

from .grid import CLEAN, EvalReport, ReportRow  # noqa: E402

__all__ = "plot_accuracy_curves", "plot_summary_box", "render_report", "render_table"


def _cell(row: ReportRow | None) -> str:
    if row is None:
        return "-"
    if row.metric == "accuracy":
        return f"{100 * row.value:.1f}"
    return f"{row.value:.2f}"


def render_table(report: EvalReport, metric: str = "accuracy") -> str:
    """
    Aligned text table, one line per defense and one column per attack.

    Accuracies are printed in percent, EERs as they are stored. The clean column comes
    first and attack columns keep report order.

    Examples:
        >>> from xvguard.eval.grid import ReportRow
        >>> row = ReportRow("none", "clean", "none", "none", 0.0, "bpda", "accuracy", 0.95, 20, 0, 0)
        >>> print(render_table(EvalReport(rows=[row])))
        defense | clean
        --------+------
        none    |  95.0
    """
    rows = [r for r in report.rows if r.metric == metric]
    attacks = list(dict.fromkeys(r.attack for r in rows))
    attacks.sort(key=lambda a: a != CLEAN)
    defenses = list(dict.fromkeys(r.defense for r in rows))
    lookup = {(r.defense, r.attack): r for r in rows}

    header = ["defense", *attacks]
    body = [[d, *(_cell(lookup.get((d, a))) for a in attacks)] for d in defenses]
    widths = [max(len(line[i]) for line in [header, *body]) for i in range(len(header))]

    def line(cells: list[str]) -> str:
        first = cells[0].ljust(widths[0])
        rest = [c.rjust(w) for c, w in zip(cells[1:], widths[1:])]
        return " | ".join([first, *rest])

    rule = "-+-".join("-" * w for w in widths)
    return "\n".join([line(header), rule, *(line(cells) for cells in body)])


def plot_accuracy_curves(report: EvalReport, path: str | Path) -> Path:
    """
    Accuracy against epsilon, one panel per attack family and one curve per defense.

    The clean accuracy is drawn at the left edge of every curve.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    rows = [r for r in report.rows if r.metric == "accuracy"]
    families = list(dict.fromkeys(f"{r.algorithm}-{r.norm}" for r in rows if r.attack != CLEAN and r.epsilon > 0))

    figure, axes = pyplot.subplots(1, max(1, len(families)), figsize=(4.5 * max(1, len(families)), 3.6), squeeze=False)
    for ax, family in zip(axes[0], families or ["clean"]):
        for defense in dict.fromkeys(r.defense for r in rows):
            points = sorted(
                (r.epsilon, 100 * r.value)
                for r in rows
                if r.defense == defense and f"{r.algorithm}-{r.norm}" == family and r.epsilon > 0
            )
            if not points:
                continue
            xs, ys = zip(*points)
            ax.plot(xs, ys, marker="o", label=defense)
        ax.set_xscale("log")
        ax.set_ylim(0, 100)
        ax.set_xlabel("epsilon")
        ax.set_ylabel("accuracy (%)")
        ax.set_title(family)
        ax.grid(alpha=0.3)
    axes[0][0].legend(fontsize="small")
    figure.tight_layout()
    figure.savefig(path, format="png", metadata={"Software": None})
    pyplot.close(figure)
    return path


def plot_summary_box(report: EvalReport, path: str | Path) -> Path:
    """Distribution of adversarial accuracies per defense."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    rows = [r for r in report.rows if r.metric == "accuracy" and r.attack != CLEAN]
    defenses = list(dict.fromkeys(r.defense for r in rows))
    data = [[100 * r.value for r in rows if r.defense == d] for d in defenses]

    figure, ax = pyplot.subplots(figsize=(max(4.0, 1.2 * len(defenses)), 3.6))
    if data:
        ax.boxplot(data)
        ax.set_xticks(range(1, len(defenses) + 1), defenses, rotation=30, ha="right")
    ax.set_ylim(0, 100)
    ax.set_ylabel("adversarial accuracy (%)")
    ax.grid(axis="y", alpha=0.3)
    figure.tight_layout()
    figure.savefig(path, format="png", metadata={"Software": None})
    pyplot.close(figure)
    return path


def render_report(report: EvalReport, out_dir: str | Path) -> dict[str, Path]:
    """
    Write the accuracy table, the EER table when present and both figures.

    Returns:
        Artifact name to path
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = {}
    table = out_dir / "accuracy.txt"
    table.write_text(render_table(report) + "\n")
    written["accuracy_table"] = table
    if any(r.metric == "eer" for r in report.rows):
        eer_table = out_dir / "eer.txt"
        eer_table.write_text(render_table(report, "eer") + "\n")
        written["eer_table"] = eer_table
    written["curves"] = plot_accuracy_curves(report, out_dir / "accuracy_vs_epsilon.png")
    written["summary"] = plot_summary_box(report, out_dir / "summary_box.png")
    return written
