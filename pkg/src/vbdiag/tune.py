"""Random-search hyperparameter optimization with a cross-validated
accuracy objective.

Every trial in one search is scored on the same fold assignment. The
family's documented default configuration is always trial 0, so the
best reported trial can never be worse than the default.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Mapping, Sequence

import numpy as np

from .domain import Dataset
from .evaluation import FoldAssignment, cross_validate, grouped_stratified_kfold
from .learners import DEFAULT_HYPERPARAMETERS, ClassifierSpec, Family


class TuneError(ValueError):
    pass


class DimensionKind(Enum):
    UNIFORM = "uniform"
    LOG_UNIFORM = "log_uniform"
    INT_UNIFORM = "int_uniform"
    CATEGORICAL = "categorical"


@dataclass(frozen=True)
class Dimension:
    kind: DimensionKind
    lo: float = 0.0
    hi: float = 0.0
    step: int = 1
    choices: tuple[Any, ...] = ()

    def __post_init__(self) -> None:
        if self.kind is DimensionKind.CATEGORICAL:
            if not self.choices:
                raise TuneError("categorical dimension needs choices")
            return
        if not self.lo < self.hi:
            raise TuneError(f"dimension bounds must satisfy lo < hi, got [{self.lo}, {self.hi}]")
        if self.kind is DimensionKind.LOG_UNIFORM and self.lo <= 0:
            raise TuneError("log-uniform bounds must be positive")
        if self.kind is DimensionKind.INT_UNIFORM and self.step < 1:
            raise TuneError("integer step must be >= 1")

    def sample(self, rng: np.random.Generator) -> Any:
        if self.kind is DimensionKind.UNIFORM:
            return float(rng.uniform(self.lo, self.hi))
        if self.kind is DimensionKind.LOG_UNIFORM:
            return float(math.exp(rng.uniform(math.log(self.lo), math.log(self.hi))))
        if self.kind is DimensionKind.INT_UNIFORM:
            n_steps = int((self.hi - self.lo) // self.step)
            return int(self.lo + self.step * rng.integers(0, n_steps + 1))
        return self.choices[int(rng.integers(0, len(self.choices)))]


@dataclass(frozen=True)
class SearchSpace:
    dimensions: Mapping[str, Dimension]

    def __post_init__(self) -> None:
        object.__setattr__(self, "dimensions", dict(self.dimensions))

    def sample(self, rng: np.random.Generator) -> dict[str, Any]:
        return {name: dim.sample(rng) for name, dim in self.dimensions.items()}


DEFAULT_SEARCH_SPACES: dict[Family, SearchSpace] = {
    Family.GBT: SearchSpace({
        "n_rounds": Dimension(DimensionKind.INT_UNIFORM, 50, 400),
        "max_depth": Dimension(DimensionKind.INT_UNIFORM, 3, 8),
        "learning_rate": Dimension(DimensionKind.LOG_UNIFORM, 0.03, 0.3),
        "l2_reg": Dimension(DimensionKind.LOG_UNIFORM, 0.5, 8.0),
        "subsample_rows": Dimension(DimensionKind.UNIFORM, 0.6, 1.0),
        "subsample_features": Dimension(DimensionKind.UNIFORM, 0.6, 1.0),
    }),
    Family.RF: SearchSpace({
        "n_trees": Dimension(DimensionKind.INT_UNIFORM, 100, 500),
        "max_depth": Dimension(DimensionKind.INT_UNIFORM, 4, 16),
        "mtry": Dimension(DimensionKind.INT_UNIFORM, 3, 8),
    }),
    Family.DT: SearchSpace({
        "max_depth": Dimension(DimensionKind.INT_UNIFORM, 3, 16),
        "min_samples_leaf": Dimension(DimensionKind.INT_UNIFORM, 1, 50),
        "criterion": Dimension(DimensionKind.CATEGORICAL, choices=("gini", "entropy")),
    }),
    Family.KNN: SearchSpace({
        "k": Dimension(DimensionKind.INT_UNIFORM, 3, 51, step=2),  # odd k only
    }),
    Family.LR: SearchSpace({
        "l2_strength": Dimension(DimensionKind.LOG_UNIFORM, 1e-4, 10.0),
    }),
}


@dataclass(frozen=True)
class TrialRecord:
    trial_index: int
    config: Mapping[str, Any]
    fold_accuracies: tuple[float, ...]
    mean_accuracy: float
    rank: int
    seed: int
    failed: bool = False
    error: str = ""

    def __post_init__(self) -> None:
        object.__setattr__(self, "config", dict(self.config))


def random_search(
    space: SearchSpace | None,
    family: Family,
    dataset: Dataset,
    budget: int,
    k: int = 10,
    seed: int = 0,
) -> list[TrialRecord]:
    """Evaluate `budget` seed-deterministic configurations (trial 0 is
    the family default) by grouped stratified k-fold mean accuracy on a
    single shared fold assignment; returns trials ranked best-first."""
    if budget < 1:
        raise TuneError("budget must be >= 1")
    if space is None:
        space = DEFAULT_SEARCH_SPACES[family]
    assignment = grouped_stratified_kfold(dataset, k, seed)
    rng = np.random.default_rng(seed)
    configs: list[dict[str, Any]] = [dict(DEFAULT_HYPERPARAMETERS[family])]
    for _ in range(budget - 1):
        configs.append(space.sample(rng))

    evaluated: list[tuple[int, dict, tuple[float, ...], float, bool, str]] = []
    for idx, config in enumerate(configs):
        spec = ClassifierSpec(family=family, hyperparameters=config)
        try:
            report = cross_validate(spec, dataset, k, seed, fold_assignment=assignment)
            accs = tuple(f.accuracy for f in report.folds)
            evaluated.append((idx, config, accs, report.mean["accuracy"], False, ""))
        except Exception as exc:  # a failed trial is recorded, not fatal
            evaluated.append((idx, config, (), -math.inf, True, str(exc)))

    order = sorted(range(len(evaluated)), key=lambda i: (-evaluated[i][3], evaluated[i][0]))
    records = [
        TrialRecord(
            trial_index=evaluated[i][0],
            config=evaluated[i][1],
            fold_accuracies=evaluated[i][2],
            mean_accuracy=evaluated[i][3],
            rank=rank + 1,
            seed=seed,
            failed=evaluated[i][4],
            error=evaluated[i][5],
        )
        for rank, i in enumerate(order)
    ]
    return records


def trials_to_rows(records: Sequence[TrialRecord]) -> list[list[str]]:
    """Trial log rows for CSV export (one row per trial, best first)."""
    keys = sorted({k for r in records for k in r.config})
    header = ["rank", "trial", "mean_accuracy", "failed"] + keys + ["fold_accuracies"]
    rows = [header]
    for r in records:
        rows.append(
            [str(r.rank), str(r.trial_index),
             "" if r.failed else repr(r.mean_accuracy), str(r.failed).lower()]
            + [repr(r.config[k]) if k in r.config else "" for k in keys]
            + ["|".join(repr(a) for a in r.fold_accuracies)]
        )
    return rows
