"""Plain-text and CSV report rendering for cross-validation,
comparison and band analyses.

Layouts follow the usual presentation: learners as rows, metrics
(accuracy, sensitivity, specificity, Brier, AUC) as columns, each cell
mean +/- sample standard deviation across folds. The pairwise table
always prints the Bonferroni multiplier next to the adjusted p-values.
"""

from __future__ import annotations

from typing import Mapping, Sequence

from .evaluation import BandReport, CvReport, MetricsReport
from .stats import Alternative, bonferroni, paired_t, wilcoxon_signed_rank

_METRIC_COLUMNS = ("accuracy", "sensitivity", "specificity", "brier", "auc")
_METRIC_TITLES = ("Accuracy", "Sensitivity", "Specificity", "Brier score", "AUC")


def _cell(report: CvReport, metric: str) -> str:
    if metric not in report.mean:
        return "undefined"
    return f"{report.mean[metric]:.3f} ± {report.sd[metric]:.3f}"


def cv_table(reports: Mapping[str, CvReport], title: str = "10-fold cross-validation results") -> str:
    """Rows = learners, columns = the five metrics, mean +/- sd."""
    width = max((len(name) for name in reports), default=6) + 2
    lines = [title, ""]
    header = "".ljust(width) + "".join(t.ljust(16) for t in _METRIC_TITLES)
    lines.append(header)
    lines.append("-" * len(header))
    for name, report in reports.items():
        lines.append(name.ljust(width) + "".join(_cell(report, m).ljust(16) for m in _METRIC_COLUMNS))
    return "\n".join(lines) + "\n"


def cv_csv_rows(reports: Mapping[str, CvReport]) -> list[list[str]]:
    rows = [["method", "fold"] + list(_METRIC_COLUMNS)]
    for name, report in reports.items():
        for i, fold in enumerate(report.folds):
            rows.append(
                [name, str(i)]
                + [
                    repr(getattr(fold, m)) if getattr(fold, m) is not None else ""
                    for m in _METRIC_COLUMNS
                ]
            )
        rows.append(
            [name, "mean"] + [repr(report.mean[m]) if m in report.mean else "" for m in _METRIC_COLUMNS]
        )
        rows.append(
            [name, "sd"] + [repr(report.sd[m]) if m in report.sd else "" for m in _METRIC_COLUMNS]
        )
    return rows


def pairwise_comparison_table(
    reports: Mapping[str, CvReport],
    metrics: Sequence[str] = ("accuracy", "brier"),
) -> str:
    """Per-fold paired tests for every method pair and metric.

    Two-sided paired t and Wilcoxon signed-rank p-values, both
    Bonferroni-adjusted with m = number of pairs (printed per column).
    """
    names = list(reports)
    pairs = [(a, b) for i, a in enumerate(names) for b in names[i + 1 :]]
    if not pairs:
        return "pairwise comparison: need at least two methods\n"
    m = len(pairs)
    lines = [
        f"pairwise comparisons (two-sided, Bonferroni m = {m} per metric/test column)",
        "",
        "pair".ljust(24)
        + "".join(f"{metric}:t-p adj".ljust(18) + f"{metric}:W-p adj".ljust(18) for metric in metrics),
    ]
    lines.append("-" * len(lines[-1]))
    cells: dict[tuple[str, str, str, str], float] = {}
    for metric in metrics:
        t_ps, w_ps = [], []
        for a, b in pairs:
            xa = [getattr(f, metric) for f in reports[a].folds]
            xb = [getattr(f, metric) for f in reports[b].folds]
            t_ps.append(paired_t(xa, xb, Alternative.TWO_SIDED).p_value)
            w_ps.append(wilcoxon_signed_rank(xa, xb, Alternative.TWO_SIDED).p_value)
        for (a, b), tp, wp in zip(pairs, bonferroni(t_ps, m), bonferroni(w_ps, m)):
            cells[(a, b, metric, "t")] = tp
            cells[(a, b, metric, "w")] = wp
    for a, b in pairs:
        row = f"{a} vs {b}".ljust(24)
        for metric in metrics:
            row += f"{cells[(a, b, metric, 't')]:.4f}".ljust(18)
            row += f"{cells[(a, b, metric, 'w')]:.4f}".ljust(18)
        lines.append(row)
    return "\n".join(lines) + "\n"


def _metrics_line(name: str, report: MetricsReport | None) -> str:
    if report is None:
        return f"{name.ljust(12)}(no cases in band)"
    parts = [f"accuracy {report.accuracy:.3f}"]
    parts.append(f"sensitivity {report.sensitivity:.3f}" if report.sensitivity is not None else "sensitivity undefined")
    parts.append(f"specificity {report.specificity:.3f}" if report.specificity is not None else "specificity undefined")
    parts.append(f"brier {report.brier:.3f}")
    parts.append(f"auc {report.auc:.3f}" if report.auc is not None else "auc undefined")
    if report.ci_accuracy is not None:
        lo, hi = report.ci_accuracy
        parts.append(f"accuracy 95% CI [{lo:.3f}, {hi:.3f}]")
    return f"{name.ljust(12)}" + "  ".join(parts)


def band_report_text(report: BandReport) -> str:
    lines = [f"CRP band [{report.lo:g}, {report.hi:g}] mg/L"]
    if report.empty:
        lines.append("empty band: no cases with CRP in range")
        return "\n".join(lines) + "\n"
    lines.append(
        f"cases {report.n_band} ({report.n_bacteria} bacteria / {report.n_virus} virus; "
        f"p_B = {report.p_b:.3f}, p_V = {report.p_v:.3f})"
    )
    lines.append(
        f"baselines: random {report.random_baseline:.4f}, "
        f"prevalent {report.prevalent_baseline:.4f}"
    )
    lines.append(_metrics_line("model", report.model_metrics))
    lines.append(_metrics_line("crp-rule", report.rule_metrics))
    return "\n".join(lines) + "\n"


def band_csv_rows(report: BandReport) -> list[list[str]]:
    rows = [["field", "value"]]
    rows.append(["lo", repr(report.lo)])
    rows.append(["hi", repr(report.hi)])
    rows.append(["n_band", str(report.n_band)])
    rows.append(["n_bacteria", str(report.n_bacteria)])
    rows.append(["n_virus", str(report.n_virus)])
    if not report.empty:
        rows.append(["p_b", repr(report.p_b)])
        rows.append(["p_v", repr(report.p_v)])
        rows.append(["random_baseline", repr(report.random_baseline)])
        rows.append(["prevalent_baseline", repr(report.prevalent_baseline)])
        for name, metrics in (("model", report.model_metrics), ("rule", report.rule_metrics)):
            for m in _METRIC_COLUMNS:
                value = getattr(metrics, m)
                rows.append([f"{name}_{m}", repr(value) if value is not None else ""])
    return rows


def filter_report_text(stages) -> str:
    lines = ["filter pipeline"]
    for stage in stages:
        lines.append(
            f"  {stage.name}: in {stage.cases_in}, excluded {stage.cases_excluded} ({stage.reason})"
        )
    return "\n".join(lines) + "\n"
