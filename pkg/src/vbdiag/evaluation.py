"""Metrics, cross-validation and the CRP decision-rule baseline.

Bacteria is the positive class throughout: sensitivity is the bacterial
detection rate, specificity the viral one, and predicted probabilities
are probabilities of Bacteria. The default operating point maps
probability >= 0.5 to Bacteria.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .domain import Case, Dataset, Label, Provenance
from .learners import ClassifierSpec, fit_classifier
from .stats import midranks, normal_quantile


class EvaluationError(ValueError):
    pass


class LengthMismatch(EvaluationError):
    pass


class EmptyInput(EvaluationError):
    pass


class SingleClassData(EvaluationError):
    pass


class InvalidCounts(EvaluationError):
    pass


class TooFewGroups(EvaluationError):
    pass


class NegativeCrp(EvaluationError):
    pass


@dataclass(frozen=True)
class MetricsReport:
    accuracy: float
    sensitivity: float | None
    specificity: float | None
    brier: float
    n: int
    threshold: float
    auc: float | None = None
    ci_accuracy: tuple[float, float] | None = None
    flags: tuple[str, ...] = ()


@dataclass(frozen=True)
class RocCurve:
    # (false positive rate, true positive rate, threshold), threshold descending
    points: tuple[tuple[float, float, float], ...]
    operating_point: float = 0.5


def classification_metrics(
    probas: Sequence[float],
    labels: Sequence[int],
    threshold: float = 0.5,
) -> MetricsReport:
    """Accuracy, sensitivity, specificity and Brier score at a fixed
    operating point. A class absent from `labels` leaves its rate
    undefined (None) with a flag rather than a silent zero."""
    p = np.asarray(probas, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if p.shape != y.shape or p.ndim != 1:
        raise LengthMismatch("probas and labels must be equal-length vectors")
    if len(p) == 0:
        raise EmptyInput("no observations")
    pred = (p >= threshold).astype(np.int64)
    tp = int(np.sum((pred == 1) & (y == 1)))
    tn = int(np.sum((pred == 0) & (y == 0)))
    fp = int(np.sum((pred == 1) & (y == 0)))
    fn = int(np.sum((pred == 0) & (y == 1)))
    flags: list[str] = []
    sensitivity = specificity = None
    if tp + fn > 0:
        sensitivity = tp / (tp + fn)
    else:
        flags.append("sensitivity_undefined")
    if tn + fp > 0:
        specificity = tn / (tn + fp)
    else:
        flags.append("specificity_undefined")
    return MetricsReport(
        accuracy=(tp + tn) / len(y),
        sensitivity=sensitivity,
        specificity=specificity,
        brier=float(np.mean((p - y) ** 2)),
        n=len(y),
        threshold=threshold,
        flags=tuple(flags),
    )


def roc_auc(probas: Sequence[float], labels: Sequence[int], operating_point: float = 0.5) -> tuple[RocCurve, float]:
    """ROC curve over the observed score thresholds and the rank-formula
    AUC (midranks halve tied pairs)."""
    p = np.asarray(probas, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if p.shape != y.shape or p.ndim != 1 or len(p) == 0:
        raise LengthMismatch("probas and labels must be equal-length non-empty vectors")
    n_pos = int(np.sum(y == 1))
    n_neg = len(y) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise SingleClassData("AUC needs both classes")
    ranks = midranks(p)
    auc = (float(np.sum(ranks[y == 1])) - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)

    order = np.argsort(-p, kind="stable")
    sorted_p = p[order]
    sorted_y = y[order]
    points: list[tuple[float, float, float]] = [(0.0, 0.0, math.inf)]
    tp = fp = 0
    i = 0
    while i < len(sorted_p):
        j = i
        while j + 1 < len(sorted_p) and sorted_p[j + 1] == sorted_p[i]:
            j += 1
        tp += int(np.sum(sorted_y[i : j + 1] == 1))
        fp += (j - i + 1) - int(np.sum(sorted_y[i : j + 1] == 1))
        points.append((fp / n_neg, tp / n_pos, float(sorted_p[i])))
        i = j + 1
    return RocCurve(tuple(points), operating_point), float(auc)


def agresti_coull(successes: int, n: int, confidence: float = 0.95) -> tuple[float, float]:
    """Adjusted-count binomial interval, clipped to [0, 1]."""
    if n < 1 or not 0 <= successes <= n:
        raise InvalidCounts(f"invalid counts: {successes} of {n}")
    if not 0.0 < confidence < 1.0:
        raise InvalidCounts(f"confidence must be in (0,1), got {confidence}")
    z = normal_quantile(1.0 - (1.0 - confidence) / 2.0)
    n_tilde = n + z * z
    p_tilde = (successes + z * z / 2.0) / n_tilde
    half = z * math.sqrt(p_tilde * (1.0 - p_tilde) / n_tilde)
    return (max(0.0, p_tilde - half), min(1.0, p_tilde + half))


# --- grouped stratified k-fold ------------------------------------------------


@dataclass(frozen=True)
class FoldAssignment:
    k: int
    fold_of_case: Mapping[str, int]
    seed: int

    def __post_init__(self) -> None:
        object.__setattr__(self, "fold_of_case", dict(self.fold_of_case))


def _patient_groups(cases: Sequence[Case]) -> dict[str, list[int]]:
    groups: dict[str, list[int]] = {}
    for i, case in enumerate(cases):
        groups.setdefault(case.patient_id, []).append(i)
    return groups


def grouped_stratified_kfold(dataset: Dataset, k: int, seed: int) -> FoldAssignment:
    """Assign whole patient groups to folds, greedily balancing per-fold
    class counts. Deterministic for fixed (dataset, k, seed)."""
    if k < 2:
        raise EvaluationError("k must be >= 2")
    cases = dataset.cases
    for case in cases:
        if case.label is Label.UNLABELED:
            raise EvaluationError(f"case {case.case_id!r} is unlabeled")
    groups = _patient_groups(cases)
    if len(groups) < k:
        raise TooFewGroups(f"need at least {k} patient groups, have {len(groups)}")

    rng = np.random.default_rng(seed)
    keys = sorted(groups)
    order = rng.permutation(len(keys))
    # biggest groups first (stable, so equal sizes keep the shuffled order)
    order = sorted(order, key=lambda i: -len(groups[keys[i]]))

    y = np.array([1 if c.label is Label.BACTERIA else 0 for c in cases])
    target_b = float(np.sum(y)) / k
    target_v = float(len(y) - np.sum(y)) / k
    target_n = len(y) / k
    fold_b = np.zeros(k)
    fold_v = np.zeros(k)
    fold_n = np.zeros(k)
    fold_of_case: dict[str, int] = {}
    for gi in order:
        idx = groups[keys[gi]]
        gb = float(np.sum(y[idx]))
        gv = float(len(idx) - gb)
        gn = float(len(idx))
        # change in total squared deviation (class counts and fold size)
        # if the group joins fold f; only fold f's terms move
        costs = (
            (fold_b + gb - target_b) ** 2 - (fold_b - target_b) ** 2
            + (fold_v + gv - target_v) ** 2 - (fold_v - target_v) ** 2
            + (fold_n + gn - target_n) ** 2 - (fold_n - target_n) ** 2
        )
        f = int(np.argmin(costs))
        fold_b[f] += gb
        fold_v[f] += gv
        fold_n[f] += gn
        for i in idx:
            fold_of_case[cases[i].case_id] = f
    return FoldAssignment(k=k, fold_of_case=fold_of_case, seed=seed)


# --- cross validation ---------------------------------------------------------


@dataclass(frozen=True)
class CvReport:
    folds: tuple[MetricsReport, ...]
    mean: Mapping[str, float]
    sd: Mapping[str, float]
    fold_assignment: FoldAssignment | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "mean", dict(self.mean))
        object.__setattr__(self, "sd", dict(self.sd))


_CV_METRICS = ("accuracy", "sensitivity", "specificity", "brier", "auc")


def summarize_folds(folds: Sequence[MetricsReport], assignment: FoldAssignment | None = None) -> CvReport:
    mean: dict[str, float] = {}
    sd: dict[str, float] = {}
    for name in _CV_METRICS:
        values = [getattr(f, name) for f in folds if getattr(f, name) is not None]
        if not values:
            continue
        mean[name] = float(np.mean(values))
        sd[name] = float(np.std(values, ddof=1)) if len(values) > 1 else 0.0
    return CvReport(folds=tuple(folds), mean=mean, sd=sd, fold_assignment=assignment)


def _fold_metrics(probas: np.ndarray, y: np.ndarray, threshold: float = 0.5) -> MetricsReport:
    report = classification_metrics(probas, y, threshold)
    auc = None
    flags = list(report.flags)
    if 0 < int(np.sum(y)) < len(y):
        _, auc = roc_auc(probas, y)
    else:
        flags.append("auc_undefined")
    correct = int(np.sum((probas >= threshold).astype(np.int64) == y))
    ci = agresti_coull(correct, len(y))
    return MetricsReport(
        accuracy=report.accuracy,
        sensitivity=report.sensitivity,
        specificity=report.specificity,
        brier=report.brier,
        n=report.n,
        threshold=report.threshold,
        auc=auc,
        ci_accuracy=ci,
        flags=tuple(flags),
    )


def cv_partitions(
    dataset: Dataset,
    k: int,
    seed: int,
    noise_set: frozenset[str] = frozenset(),
    fold_assignment: FoldAssignment | None = None,
) -> tuple[FoldAssignment, list[tuple[list[int], list[int]]]]:
    """Per-fold (train indices, validation indices) under the grouped
    stratified assignment.

    Noise cases are excluded from every training partition but validated
    in their own fold; bootstrap-labeled cases augment every training
    partition and are never validated.
    """
    cases = dataset.cases
    clinical = [i for i, c in enumerate(cases) if c.provenance is not Provenance.BOOTSTRAP_LABELED]
    boot = [i for i, c in enumerate(cases) if c.provenance is Provenance.BOOTSTRAP_LABELED]
    unknown_noise = noise_set - {cases[i].case_id for i in clinical}
    if unknown_noise:
        raise EvaluationError(f"noise ids not in the dataset: {sorted(unknown_noise)[:5]}")

    if fold_assignment is None:
        fold_assignment = grouped_stratified_kfold(dataset.subset(clinical), k, seed)
    folds_of = fold_assignment.fold_of_case
    partitions: list[tuple[list[int], list[int]]] = []
    for f in range(fold_assignment.k):
        val_idx = [i for i in clinical if folds_of[cases[i].case_id] == f]
        train_idx = [
            i for i in clinical
            if folds_of[cases[i].case_id] != f and cases[i].case_id not in noise_set
        ] + boot
        partitions.append((train_idx, val_idx))
    return fold_assignment, partitions


def cross_validate(
    spec: ClassifierSpec,
    dataset: Dataset,
    k: int,
    seed: int,
    noise_set: frozenset[str] = frozenset(),
    fold_assignment: FoldAssignment | None = None,
) -> CvReport:
    """Grouped stratified k-fold evaluation over cv_partitions."""
    fold_assignment, partitions = cv_partitions(dataset, k, seed, noise_set, fold_assignment)
    X = dataset.feature_matrix()
    y = dataset.label_vector()
    fit_seeds = np.random.SeedSequence(seed).generate_state(fold_assignment.k)
    fold_reports: list[MetricsReport] = []
    for f, (train_idx, val_idx) in enumerate(partitions):
        model = fit_classifier(spec, X[train_idx], y[train_idx], seed=int(fit_seeds[f]))
        probas = model.predict_proba(X[val_idx])
        fold_reports.append(_fold_metrics(probas, y[val_idx]))
    return summarize_folds(fold_reports, fold_assignment)


# --- CRP decision rule ---------------------------------------------------------


@dataclass(frozen=True)
class CrpRule:
    threshold: float

    def __post_init__(self) -> None:
        if self.threshold < 0:
            raise EvaluationError("CRP threshold must be >= 0")


def fit_crp_rule(dataset: Dataset) -> CrpRule:
    """Accuracy-maximizing CRP cutoff over midpoint candidates plus the
    0 and +inf sentinels; ties resolve to the smallest threshold."""
    crp = np.array([c.panel.crp for c in dataset.cases])
    y = dataset.label_vector()
    nb = int(np.sum(y))
    if nb == 0 or nb == len(y):
        raise SingleClassData("CRP rule needs both classes")
    order = np.argsort(crp, kind="stable")
    cs = crp[order]
    ys = y[order]
    # candidate j puts the first j sorted cases below the threshold
    cum_b = np.concatenate([[0], np.cumsum(ys)])
    cum_v = np.concatenate([[0], np.cumsum(1 - ys)])
    accuracy = (cum_v + nb - cum_b) / len(y)
    best_j = 0
    for j in range(1, len(y) + 1):
        # only boundaries between distinct values are realizable thresholds
        if j < len(y) and cs[j - 1] == cs[j]:
            continue
        if accuracy[j] > accuracy[best_j]:
            best_j = j
    if best_j == 0:
        return CrpRule(0.0)
    if best_j == len(y):
        return CrpRule(math.inf)
    return CrpRule(float((cs[best_j - 1] + cs[best_j]) / 2.0))


def crp_rule_predict(rule: CrpRule, crp: float) -> Label:
    """Virus below the threshold, Bacteria at or above it."""
    if crp < 0:
        raise NegativeCrp(f"CRP must be >= 0, got {crp}")
    return Label.VIRUS if crp < rule.threshold else Label.BACTERIA


def crp_rule_probas(rule: CrpRule, crp_values: Sequence[float]) -> np.ndarray:
    """Hard rule predictions as 0/1 probabilities of Bacteria."""
    crp_values = np.asarray(crp_values, dtype=np.float64)
    if np.any(crp_values < 0):
        raise NegativeCrp("CRP values must be >= 0")
    return (crp_values >= rule.threshold).astype(np.float64)


def cross_validate_crp_rule(
    dataset: Dataset,
    k: int,
    seed: int,
    fold_assignment: FoldAssignment | None = None,
) -> CvReport:
    """The CRP baseline evaluated exactly like a learner: the cutoff is
    refit on each training partition."""
    cases = dataset.cases
    clinical = [i for i, c in enumerate(cases) if c.provenance is not Provenance.BOOTSTRAP_LABELED]
    if fold_assignment is None:
        fold_assignment = grouped_stratified_kfold(dataset.subset(clinical), k, seed)
    folds_of = fold_assignment.fold_of_case
    y = dataset.label_vector()
    crp = np.array([c.panel.crp for c in cases])
    fold_reports: list[MetricsReport] = []
    for f in range(fold_assignment.k):
        val_idx = [i for i in clinical if folds_of[cases[i].case_id] == f]
        train_idx = [i for i in clinical if folds_of[cases[i].case_id] != f]
        rule = fit_crp_rule(dataset.subset(train_idx))
        probas = crp_rule_probas(rule, crp[val_idx])
        fold_reports.append(_fold_metrics(probas, y[val_idx]))
    return summarize_folds(fold_reports, fold_assignment)


# --- CRP band analysis ----------------------------------------------------------


@dataclass(frozen=True)
class BandReport:
    lo: float
    hi: float
    n_band: int
    n_bacteria: int
    n_virus: int
    p_b: float | None
    p_v: float | None
    random_baseline: float | None
    prevalent_baseline: float | None
    model_metrics: MetricsReport | None
    rule_metrics: MetricsReport | None
    empty: bool = False
    flags: tuple[str, ...] = ()


def band_analysis(
    dataset: Dataset,
    model_probas: Sequence[float],
    rule: CrpRule,
    lo: float = 10.0,
    hi: float = 40.0,
) -> BandReport:
    """Composition, simplistic baselines and model-vs-rule metrics
    restricted to the CRP band [lo, hi] (both ends inclusive)."""
    probas = np.asarray(model_probas, dtype=np.float64)
    if len(probas) != len(dataset.cases):
        raise LengthMismatch("one model probability per dataset case required")
    crp = np.array([c.panel.crp for c in dataset.cases])
    y = dataset.label_vector()
    in_band = (crp >= lo) & (crp <= hi)
    n_band = int(np.sum(in_band))
    if n_band == 0:
        return BandReport(lo, hi, 0, 0, 0, None, None, None, None, None, None,
                          empty=True, flags=("empty_band",))
    yb = y[in_band]
    n_bact = int(np.sum(yb))
    n_vir = n_band - n_bact
    p_b = n_bact / n_band
    p_v = n_vir / n_band
    flags: list[str] = []

    def _band_metrics(p: np.ndarray) -> MetricsReport:
        report = classification_metrics(p, yb)
        auc = None
        if 0 < n_bact < n_band:
            _, auc = roc_auc(p, yb)
        else:
            flags.append("auc_undefined")
        correct = int(np.sum((p >= 0.5).astype(np.int64) == yb))
        return MetricsReport(
            accuracy=report.accuracy, sensitivity=report.sensitivity,
            specificity=report.specificity, brier=report.brier, n=report.n,
            threshold=report.threshold, auc=auc,
            ci_accuracy=agresti_coull(correct, n_band), flags=report.flags,
        )

    return BandReport(
        lo=lo,
        hi=hi,
        n_band=n_band,
        n_bacteria=n_bact,
        n_virus=n_vir,
        p_b=p_b,
        p_v=p_v,
        random_baseline=p_b * p_b + p_v * p_v,
        prevalent_baseline=max(p_b, p_v),
        model_metrics=_band_metrics(probas[in_band]),
        rule_metrics=_band_metrics(crp_rule_probas(rule, crp[in_band])),
        flags=tuple(flags),
    )
