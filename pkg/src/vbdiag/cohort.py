"""CSV ingestion, the case filter pipeline, and the grouped stratified
train/test split.

CSV format: header `patient_id,case_id,label` followed by measurement
columns named `<parameter>__<unit>`; labels are BACTERIA / VIRUS /
UNLABELED. Exports are written in canonical units with round-trip-exact
float formatting so reruns with identical seeds are byte-identical.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .domain import (
    CANONICAL_UNITS,
    FEATURE_ORDER,
    Case,
    Dataset,
    DomainError,
    Label,
    MissingParameter,
    Provenance,
    UnitRule,
    _normalize_name,
    canonicalize,
    load_unit_rules,
    validate_case,
)


class CohortError(ValueError):
    pass


class MalformedHeader(CohortError):
    pass


class MalformedRow(CohortError):
    pass


class InfeasibleSplit(CohortError):
    pass


@dataclass(frozen=True)
class FilterStage:
    name: str
    cases_in: int
    cases_excluded: int
    reason: str


@dataclass(frozen=True)
class FilterReport:
    stages: tuple[FilterStage, ...]

    def __post_init__(self) -> None:
        for prev, cur in zip(self.stages, self.stages[1:]):
            if prev.cases_in - prev.cases_excluded != cur.cases_in:
                raise CohortError(
                    f"filter counts do not telescope between "
                    f"{prev.name!r} and {cur.name!r}"
                )

    @property
    def cases_out(self) -> int:
        if not self.stages:
            return 0
        last = self.stages[-1]
        return last.cases_in - last.cases_excluded


def filter_pipeline(cases: Sequence[Case] | Dataset) -> tuple[Dataset, FilterReport]:
    """Completeness, ambiguity and duplicate filtering.

    Stage 1 drops cases with invalid or missing panel values; stage 2
    drops every copy of a case_id that appears with conflicting labels;
    stage 3 keeps the first copy of same-label duplicates.
    """
    case_list = list(cases.cases) if isinstance(cases, Dataset) else list(cases)
    stages: list[FilterStage] = []

    n_in = len(case_list)
    complete = [c for c in case_list if validate_case(c).ok]
    stages.append(FilterStage("completeness", n_in, n_in - len(complete), "No CBC or CRP"))

    labels_by_id: dict[str, set[Label]] = {}
    for c in complete:
        labels_by_id.setdefault(c.case_id, set()).add(c.label)
    ambiguous = {cid for cid, labels in labels_by_id.items()
                 if Label.BACTERIA in labels and Label.VIRUS in labels}
    unambiguous = [c for c in complete if c.case_id not in ambiguous]
    stages.append(
        FilterStage("ambiguity", len(complete), len(complete) - len(unambiguous), "ambiguous")
    )

    seen: set[str] = set()
    unique: list[Case] = []
    for c in unambiguous:
        if c.case_id in seen:
            continue
        seen.add(c.case_id)
        unique.append(c)
    stages.append(
        FilterStage("duplicates", len(unambiguous), len(unambiguous) - len(unique), "duplicate case_id")
    )

    return Dataset(tuple(unique)), FilterReport(tuple(stages))


def _parse_header(header: Sequence[str], rules: Sequence[UnitRule]) -> list[tuple[str, str]]:
    if len(header) < 3 or [h.strip() for h in header[:3]] != ["patient_id", "case_id", "label"]:
        raise MalformedHeader(
            "header must start with patient_id,case_id,label; got "
            + ",".join(header[:3])
        )
    alias_map = {}
    for rule in rules:
        for alias in (rule.parameter, *rule.parameter_aliases):
            alias_map[_normalize_name(alias)] = rule.parameter
    columns: list[tuple[str, str]] = []
    seen: set[str] = set()
    for col in header[3:]:
        if "__" not in col:
            raise MalformedHeader(f"measurement column {col!r} is not of the form <param>__<unit>")
        name, unit = col.split("__", 1)
        param = alias_map.get(_normalize_name(name))
        if param is None:
            raise MalformedHeader(f"unknown measurement column {name!r}")
        if param in seen:
            raise MalformedHeader(f"duplicate measurement column for {param!r}")
        seen.add(param)
        columns.append((name, unit))
    return columns


def ingest_csv(
    path: str | Path,
    rules: Sequence[UnitRule] | None = None,
) -> tuple[Dataset, FilterReport]:
    """Read a cohort CSV: each row is canonicalized and validated, rows
    with missing or invalid measurements are excluded and counted, and
    conflicting-label duplicates are dropped."""
    if rules is None:
        rules = load_unit_rules()
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise MalformedHeader(f"{path}: empty file, no header") from None
        columns = _parse_header(header, rules)
        cases: list[Case] = []
        n_rows = 0
        n_incomplete = 0
        for rowno, row in enumerate(reader, start=2):
            if not row:
                continue
            n_rows += 1
            if len(row) != 3 + len(columns):
                raise MalformedRow(f"row {rowno}: expected {3 + len(columns)} fields, got {len(row)}")
            patient_id, case_id, label_text = (v.strip() for v in row[:3])
            try:
                label = Label(label_text.upper())
            except ValueError:
                raise MalformedRow(f"row {rowno}: unknown label {label_text!r}") from None
            raw: list[tuple[str, object, str]] = []
            for (name, unit), text in zip(columns, row[3:]):
                text = text.strip()
                if not text:
                    continue  # missing measurement; surfaces as MissingParameter
                if name.lower() == "sex":
                    raw.append((name, text, unit))
                    continue
                try:
                    value = float(text)
                except ValueError:
                    raise MalformedRow(f"row {rowno}: non-numeric value {text!r} in {name!r}") from None
                raw.append((name, value, unit))
            try:
                panel = canonicalize(raw, rules)
            except MissingParameter:
                n_incomplete += 1
                continue
            except DomainError as exc:
                raise MalformedRow(f"row {rowno}: {exc}") from None
            case = Case(patient_id, case_id, panel, label, Provenance.CLINICAL)
            if not validate_case(case).ok:
                n_incomplete += 1
                continue
            cases.append(case)

    ingest_stage = FilterStage("completeness", n_rows, n_incomplete, "No CBC or CRP")
    filtered, downstream = filter_pipeline(cases)
    return filtered, FilterReport((ingest_stage,) + downstream.stages[1:])


def _format_value(value: float) -> str:
    return repr(float(value))


def export_csv(dataset: Dataset, path: str | Path) -> None:
    """Write a dataset in canonical units, byte-deterministically."""
    path = Path(path)
    header = ["patient_id", "case_id", "label"]
    header += [f"{name}__{CANONICAL_UNITS[name]}" for name in FEATURE_ORDER]
    lines = [",".join(header)]
    for case in dataset.cases:
        row = [case.patient_id, case.case_id, case.label.value]
        for name in FEATURE_ORDER:
            if name == "sex":
                row.append(case.panel.sex.value)
            else:
                row.append(_format_value(getattr(case.panel, name)))
        lines.append(",".join(row))
    path.write_text("\n".join(lines) + "\n")


# --- grouped stratified split -------------------------------------------------


@dataclass(frozen=True)
class SplitSpec:
    test_fraction: float
    seed: int

    def __post_init__(self) -> None:
        if not 0.0 < self.test_fraction < 1.0:
            raise CohortError(f"test_fraction must be in (0,1), got {self.test_fraction}")


def grouped_stratified_split(dataset: Dataset, spec: SplitSpec) -> tuple[Dataset, Dataset]:
    """Patient-atomic stratified split.

    Every patient's cases land wholly on one side, unlabeled cases are
    always in train, and labeled class proportions in test track the
    global proportions as closely as group atomicity allows.
    """
    if len(dataset) == 0:
        raise CohortError("cannot split an empty dataset")
    cases = dataset.cases
    groups: dict[str, list[int]] = {}
    for i, case in enumerate(cases):
        groups.setdefault(case.patient_id, []).append(i)

    forced_train: list[str] = []
    eligible: list[str] = []
    for pid, idx in groups.items():
        if any(cases[i].label is Label.UNLABELED for i in idx):
            forced_train.append(pid)
        else:
            eligible.append(pid)

    budget = spec.test_fraction * len(cases)
    if len(groups) >= 2 and eligible and min(len(groups[p]) for p in eligible) > budget:
        raise InfeasibleSplit(
            f"every patient group exceeds the test budget of {budget:.1f} cases"
        )

    n_b = sum(1 for c in cases if c.label is Label.BACTERIA)
    n_v = sum(1 for c in cases if c.label is Label.VIRUS)
    # per-side targets over (bacteria, virus, total labeled)
    target_test = np.array([n_b, n_v, n_b + n_v]) * spec.test_fraction
    target_train = np.array([n_b, n_v, n_b + n_v]) * (1 - spec.test_fraction)

    counts_train = np.zeros(3)
    counts_test = np.zeros(3)
    test_ids: set[str] = set()
    for pid in forced_train:
        for i in groups[pid]:
            if cases[i].label is Label.BACTERIA:
                counts_train += (1, 0, 1)
            elif cases[i].label is Label.VIRUS:
                counts_train += (0, 1, 1)

    rng = np.random.default_rng(spec.seed)
    eligible = sorted(eligible)
    order = [eligible[i] for i in rng.permutation(len(eligible))]
    for pid in order:
        g = np.zeros(3)
        for i in groups[pid]:
            if cases[i].label is Label.BACTERIA:
                g += (1, 0, 1)
            else:
                g += (0, 1, 1)
        # change in total squared deviation if the group goes to each side
        delta_test = float(np.sum((counts_test + g - target_test) ** 2 - (counts_test - target_test) ** 2))
        delta_train = float(np.sum((counts_train + g - target_train) ** 2 - (counts_train - target_train) ** 2))
        if delta_test < delta_train:
            counts_test += g
            test_ids.add(pid)
        else:
            counts_train += g

    train_idx = [i for i, c in enumerate(cases) if c.patient_id not in test_ids]
    test_idx = [i for i, c in enumerate(cases) if c.patient_id in test_ids]
    return dataset.subset(train_idx), dataset.subset(test_idx)
