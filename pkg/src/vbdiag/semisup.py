"""Bootstrap labeling of unlabeled cases and noise detection.

A model trained on the labeled cases scores the unlabeled pool once;
only cases whose winning class probability strictly exceeds the
threshold are adopted (with bootstrap provenance). Noise cases are
labeled training cases misclassified out-of-fold; they are excluded
from training partitions downstream but stay in validation partitions.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Mapping

import numpy as np

from .domain import Case, Dataset, Label, Provenance
from .evaluation import grouped_stratified_kfold
from .learners import ClassifierSpec, fit_classifier


class SemisupError(ValueError):
    pass


class InvalidThreshold(SemisupError):
    pass


class NoiseNotSubset(SemisupError):
    pass


@dataclass(frozen=True)
class BootstrapOutcome:
    labeled_additions: Dataset
    discarded: tuple[tuple[str, float], ...]  # (case_id, winning probability)
    threshold: float
    # winning probability per adopted case, for the audit export
    adopted_probabilities: tuple[tuple[str, float], ...] = ()


@dataclass(frozen=True)
class NoiseSet:
    case_ids: frozenset[str]
    detection_seed: int
    probability_of_case: Mapping[str, float]

    def __post_init__(self) -> None:
        object.__setattr__(self, "probability_of_case", dict(self.probability_of_case))


def label_by_confidence(
    case_ids: list[str],
    probas: np.ndarray,
    threshold: float,
) -> tuple[list[tuple[str, Label]], list[tuple[str, float]]]:
    """Split scored cases into adoptions and discards.

    A case is adopted only when max(p, 1 - p) is strictly above the
    threshold; the boundary value itself is discarded.
    """
    if not 0.5 < threshold < 1.0:
        raise InvalidThreshold(f"threshold must be in (0.5, 1), got {threshold}")
    adopted: list[tuple[str, Label]] = []
    discarded: list[tuple[str, float]] = []
    for cid, p in zip(case_ids, probas):
        winner = max(p, 1.0 - p)
        if winner > threshold:
            adopted.append((cid, Label.BACTERIA if p >= 0.5 else Label.VIRUS))
        else:
            discarded.append((cid, float(winner)))
    return adopted, discarded


def bootstrap_label(
    labeled: Dataset,
    unlabeled: Dataset,
    spec: ClassifierSpec,
    threshold: float = 0.70,
    seed: int = 0,
) -> BootstrapOutcome:
    """One labeling pass: fit on labeled cases only, score the pool,
    adopt the confident cases with bootstrap provenance."""
    if not 0.5 < threshold < 1.0:
        raise InvalidThreshold(f"threshold must be in (0.5, 1), got {threshold}")
    for case in unlabeled.cases:
        if case.label is not Label.UNLABELED:
            raise SemisupError(f"case {case.case_id!r} in the unlabeled pool carries a label")
    if len(unlabeled) == 0:
        return BootstrapOutcome(Dataset(()), (), threshold)

    model = fit_classifier(spec, labeled.feature_matrix(), labeled.label_vector(), seed=seed)
    probas = model.predict_proba(unlabeled.feature_matrix())
    adopted, discarded = label_by_confidence(
        [c.case_id for c in unlabeled.cases], probas, threshold
    )
    label_of = dict(adopted)
    winning = {c.case_id: max(float(p), 1.0 - float(p))
               for c, p in zip(unlabeled.cases, probas)}
    additions = tuple(
        replace(case, label=label_of[case.case_id], provenance=Provenance.BOOTSTRAP_LABELED)
        for case in unlabeled.cases
        if case.case_id in label_of
    )
    return BootstrapOutcome(
        Dataset(additions),
        tuple(discarded),
        threshold,
        adopted_probabilities=tuple((cid, winning[cid]) for cid, _ in adopted),
    )


def detect_noise(
    labeled: Dataset,
    spec: ClassifierSpec,
    k: int = 10,
    seed: int = 0,
) -> NoiseSet:
    """Cases the model cannot predict out-of-fold (at the 0.5 operating
    point) under a grouped stratified k-fold."""
    assignment = grouped_stratified_kfold(labeled, k, seed)
    X = labeled.feature_matrix()
    y = labeled.label_vector()
    folds = np.array([assignment.fold_of_case[c.case_id] for c in labeled.cases])
    oof = np.empty(len(y))
    fit_seeds = np.random.SeedSequence(seed).generate_state(k)
    for f in range(k):
        val = folds == f
        model = fit_classifier(spec, X[~val], y[~val], seed=int(fit_seeds[f]))
        oof[val] = model.predict_proba(X[val])
    wrong = (oof >= 0.5).astype(np.int64) != y
    return NoiseSet(
        case_ids=frozenset(c.case_id for c, w in zip(labeled.cases, wrong) if w),
        detection_seed=seed,
        probability_of_case={c.case_id: float(p) for c, p in zip(labeled.cases, oof)},
    )


def assemble_training(
    labeled: Dataset,
    noise: NoiseSet,
    outcome: BootstrapOutcome,
) -> tuple[Dataset, NoiseSet]:
    """Final training pool: labeled cases plus bootstrap additions
    (sorted by case_id), with the noise set passed through so
    cross-validation can honor it."""
    labeled_ids = {c.case_id for c in labeled.cases}
    if not set(noise.case_ids) <= labeled_ids:
        raise NoiseNotSubset("noise cases must come from the labeled dataset")
    overlap = labeled_ids & {c.case_id for c in outcome.labeled_additions.cases}
    if overlap:
        raise SemisupError(f"bootstrap additions collide with labeled ids: {sorted(overlap)[:5]}")
    additions = sorted(outcome.labeled_additions.cases, key=lambda c: c.case_id)
    return Dataset(tuple(labeled.cases) + tuple(additions)), noise
