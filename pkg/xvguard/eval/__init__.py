from .grid import (
    CLEAN,
    SCHEMA_VERSION,
    EvalReport,
    ReportRow,
    accuracy_grid,
    craft_attacks,
    load_report,
    universal_delta,
)
from .metrics import Calibration, accuracy, calibrate, cosine_score, eer
from .report import plot_accuracy_curves, plot_summary_box, render_report, render_table
from .verification import Trial, TrialList, VerificationResult, make_trials, verification_eval

__all__ = (
    "CLEAN",
    "SCHEMA_VERSION",
    "Calibration",
    "EvalReport",
    "ReportRow",
    "Trial",
    "TrialList",
    "VerificationResult",
    "accuracy",
    "accuracy_grid",
    "calibrate",
    "craft_attacks",
    "cosine_score",
    "eer",
    "load_report",
    "make_trials",
    "plot_accuracy_curves",
    "plot_summary_box",
    "render_report",
    "render_table",
    "universal_delta",
    "verification_eval",
)
