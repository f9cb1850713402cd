"""Canonical data model for blood panels, labels and cases.

All values are stored in the canonical SI-derived units of the reference
table (counts in 1E9/L or 1E12/L, hemoglobin and MCHC in g/L, volumes in
fL, CRP in mg/L, percentages as fractions in [0, 1]). Raw measurements in
other units are converted on ingestion by :func:`canonicalize`.

Every type here is an immutable value; operations are pure functions.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field, fields, replace
from enum import Enum
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np


class Sex(Enum):
    MALE = "M"
    FEMALE = "F"


class Label(Enum):
    BACTERIA = "BACTERIA"
    VIRUS = "VIRUS"
    UNLABELED = "UNLABELED"


class Provenance(Enum):
    CLINICAL = "clinical"
    BOOTSTRAP_LABELED = "bootstrap_labeled"
    SYNTHETIC = "synthetic"


class DomainError(ValueError):
    """Base class for data-model errors."""


class UnknownParameter(DomainError):
    pass


class UnknownUnit(DomainError):
    pass


class DuplicateParameter(DomainError):
    pass


class MissingParameter(DomainError):
    pass


class DivisionByZero(DomainError):
    pass


# Measured analytes in canonical form, in reference-table order.
MEASURED_PARAMETERS: tuple[str, ...] = (
    "wbc",
    "neutrophils_count",
    "lymphocyte_count",
    "monocyte_count",
    "neutrophils_pct",
    "lymphocyte_pct",
    "monocyte_pct",
    "rbc",
    "hb",
    "hct",
    "mcv",
    "mch",
    "mchc",
    "rdw",
    "platelet_count",
    "mpv",
    "crp",
)

# Model feature order: the 19 reference-table parameters (16 CBC values,
# CRP, NLR, age) plus sex encoded 0 = female / 1 = male. Fixed for every
# dataset in an experiment; persisted model files record it.
FEATURE_ORDER: tuple[str, ...] = MEASURED_PARAMETERS + ("nlr", "age", "sex")

CANONICAL_UNITS: dict[str, str] = {
    "wbc": "1E9/L",
    "neutrophils_count": "1E9/L",
    "lymphocyte_count": "1E9/L",
    "monocyte_count": "1E9/L",
    "neutrophils_pct": "1",
    "lymphocyte_pct": "1",
    "monocyte_pct": "1",
    "rbc": "1E12/L",
    "hb": "g/L",
    "hct": "1",
    "mcv": "fL",
    "mch": "pg/cell",
    "mchc": "g/L",
    "rdw": "1",
    "platelet_count": "1E9/L",
    "mpv": "fL",
    "crp": "mg/L",
    "nlr": "1",
    "age": "years",
    "sex": "mf",
}

_FRACTION_FIELDS = ("neutrophils_pct", "lymphocyte_pct", "monocyte_pct", "rdw")
_NONNEGATIVE_FIELDS = (
    "wbc",
    "neutrophils_count",
    "lymphocyte_count",
    "monocyte_count",
    "rbc",
    "hb",
    "mcv",
    "mch",
    "mchc",
    "platelet_count",
    "mpv",
    "crp",
    "nlr",
)


@dataclass(frozen=True)
class BloodPanel:
    """One complete blood panel in canonical units."""

    wbc: float
    neutrophils_count: float
    lymphocyte_count: float
    monocyte_count: float
    neutrophils_pct: float
    lymphocyte_pct: float
    monocyte_pct: float
    rbc: float
    hb: float
    hct: float
    mcv: float
    mch: float
    mchc: float
    rdw: float
    platelet_count: float
    mpv: float
    crp: float
    nlr: float
    age: float
    sex: Sex

    def feature_vector(self) -> np.ndarray:
        """Panel as a float vector in FEATURE_ORDER (sex encoded 0/1)."""
        vals = [getattr(self, name) for name in FEATURE_ORDER[:-1]]
        vals.append(1.0 if self.sex is Sex.MALE else 0.0)
        return np.asarray(vals, dtype=np.float64)


@dataclass(frozen=True)
class Case:
    patient_id: str
    case_id: str
    panel: BloodPanel
    label: Label
    provenance: Provenance = Provenance.CLINICAL


@dataclass(frozen=True)
class Dataset:
    """Ordered case collection with a fixed feature order."""

    cases: tuple[Case, ...]
    feature_order: tuple[str, ...] = FEATURE_ORDER

    def __post_init__(self) -> None:
        object.__setattr__(self, "cases", tuple(self.cases))
        seen: set[str] = set()
        for case in self.cases:
            if case.case_id in seen:
                raise DomainError(f"duplicate case_id in dataset: {case.case_id!r}")
            seen.add(case.case_id)
            if case.provenance is Provenance.BOOTSTRAP_LABELED and case.label is Label.UNLABELED:
                raise DomainError(f"bootstrap-labeled case {case.case_id!r} is unlabeled")

    def __len__(self) -> int:
        return len(self.cases)

    def __iter__(self):
        return iter(self.cases)

    def class_counts(self) -> dict[Label, int]:
        counts = {Label.BACTERIA: 0, Label.VIRUS: 0, Label.UNLABELED: 0}
        for case in self.cases:
            counts[case.label] += 1
        return counts

    def feature_matrix(self) -> np.ndarray:
        if not self.cases:
            return np.zeros((0, len(self.feature_order)))
        return np.stack([c.panel.feature_vector() for c in self.cases])

    def label_vector(self) -> np.ndarray:
        """Binary labels, 1 = Bacteria. Raises on unlabeled cases."""
        out = np.empty(len(self.cases), dtype=np.int64)
        for i, case in enumerate(self.cases):
            if case.label is Label.UNLABELED:
                raise DomainError(f"case {case.case_id!r} is unlabeled")
            out[i] = 1 if case.label is Label.BACTERIA else 0
        return out

    def subset(self, indices: Iterable[int]) -> "Dataset":
        return Dataset(tuple(self.cases[i] for i in indices), self.feature_order)


@dataclass(frozen=True)
class UnitRule:
    """Maps a source unit of one parameter to its canonical unit."""

    parameter: str
    parameter_aliases: tuple[str, ...]
    source_unit: str
    factor: float

    def __post_init__(self) -> None:
        if self.factor <= 0:
            raise DomainError(f"unit factor must be positive, got {self.factor}")


def _normalize_name(name: str) -> str:
    """Case-insensitive alias key with whitespace/punctuation stripped."""
    return re.sub(r"[^a-z0-9]", "", name.lower())


def _normalize_unit(unit: str) -> str:
    return re.sub(r"\s", "", unit.lower())


def load_unit_rules(path: str | Path | None = None) -> tuple[UnitRule, ...]:
    """Parse the unit table (one rule per line: param ; aliases ; unit ; factor).

    Without a path, loads the table shipped with the package.
    """
    if path is None:
        text = resources.files("vbdiag.data").joinpath("units_v1.txt").read_text()
    else:
        text = Path(path).read_text()
    rules: list[UnitRule] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = [p.strip() for p in line.split(";")]
        if len(parts) != 4:
            raise DomainError(f"unit table line {lineno}: expected 4 fields, got {len(parts)}")
        param, aliases, unit, factor = parts
        rules.append(
            UnitRule(
                parameter=param,
                parameter_aliases=tuple(a.strip() for a in aliases.split(",") if a.strip()),
                source_unit=unit,
                factor=float(factor),
            )
        )
    return tuple(rules)


def _parse_sex(value: object) -> Sex:
    if isinstance(value, Sex):
        return value
    if isinstance(value, str):
        key = _normalize_name(value)
        if key in ("m", "male", "1"):
            return Sex.MALE
        if key in ("f", "female", "0"):
            return Sex.FEMALE
    elif isinstance(value, (int, float)) and value in (0, 1):
        return Sex.MALE if value == 1 else Sex.FEMALE
    raise UnknownUnit(f"cannot interpret sex value {value!r}")


def canonicalize(
    raw: Sequence[tuple[str, object, str]],
    rules: Sequence[UnitRule],
) -> BloodPanel:
    """Resolve aliases, convert units, and assemble a canonical panel.

    `raw` is a list of (parameter name, value, unit) triples. Every
    required parameter must appear exactly once after alias resolution;
    NLR is derived from the counts when absent.
    """
    alias_map: dict[str, str] = {}
    factor_map: dict[tuple[str, str], float] = {}
    for rule in rules:
        for alias in (rule.parameter, *rule.parameter_aliases):
            alias_map[_normalize_name(alias)] = rule.parameter
        factor_map[(rule.parameter, _normalize_unit(rule.source_unit))] = rule.factor

    values: dict[str, object] = {}
    for name, value, unit in raw:
        param = alias_map.get(_normalize_name(name))
        if param is None:
            raise UnknownParameter(f"unknown parameter {name!r}")
        if param in values:
            raise DuplicateParameter(f"parameter {param!r} given more than once")
        if param == "sex":
            values[param] = _parse_sex(value)
            continue
        factor = factor_map.get((param, _normalize_unit(unit)))
        if factor is None:
            raise UnknownUnit(f"unknown unit {unit!r} for parameter {param!r}")
        values[param] = float(value) * factor

    required = set(FEATURE_ORDER) - {"nlr"}
    missing = sorted(required - set(values))
    if missing:
        raise MissingParameter(f"missing parameter(s): {', '.join(missing)}")

    if "nlr" not in values:
        lymph = float(values["lymphocyte_count"])  # type: ignore[arg-type]
        if lymph == 0:
            raise DivisionByZero("cannot derive NLR: lymphocyte_count is 0")
        values["nlr"] = float(values["neutrophils_count"]) / lymph  # type: ignore[arg-type]

    return BloodPanel(**values)  # type: ignore[arg-type]


def derive_features(panel: BloodPanel) -> BloodPanel:
    """Recompute NLR from the counts; all other fields unchanged."""
    if panel.lymphocyte_count == 0:
        raise DivisionByZero("cannot derive NLR: lymphocyte_count is 0")
    return replace(panel, nlr=panel.neutrophils_count / panel.lymphocyte_count)


@dataclass(frozen=True)
class ValidationReport:
    violations: tuple[str, ...] = ()
    missing_fields: tuple[str, ...] = ()

    @property
    def ok(self) -> bool:
        return not self.violations and not self.missing_fields


def validate_panel(panel: BloodPanel) -> ValidationReport:
    """List every violated panel invariant; never raises."""
    violations: list[str] = []
    missing: list[str] = []
    for f in fields(BloodPanel):
        value = getattr(panel, f.name)
        if value is None:
            missing.append(f.name)
            continue
        if f.name == "sex":
            if not isinstance(value, Sex):
                violations.append("sex must be Male or Female")
            continue
        value = float(value)
        if not np.isfinite(value):
            violations.append(f"{f.name} must be finite")
            continue
        if f.name in _NONNEGATIVE_FIELDS and value < 0:
            violations.append(f"{f.name} ≥ 0")
        if f.name in _FRACTION_FIELDS and not 0.0 <= value <= 1.0:
            violations.append(f"{f.name} in [0,1]")
        if f.name == "hct" and not 0.0 < value < 1.0:
            violations.append("hct in (0,1)")
        if f.name == "age" and not 18.0 <= value <= 120.0:
            violations.append("age in [18,120]")
    if (
        panel.lymphocyte_count is not None
        and panel.nlr is not None
        and panel.lymphocyte_count > 0
        and panel.neutrophils_count is not None
    ):
        expected = panel.neutrophils_count / panel.lymphocyte_count
        if not np.isclose(panel.nlr, expected, rtol=1e-9, atol=1e-12):
            violations.append("nlr = neutrophils_count / lymphocyte_count")
    return ValidationReport(tuple(violations), tuple(missing))


def validate_case(case: Case) -> ValidationReport:
    report = validate_panel(case.panel)
    violations = list(report.violations)
    if not case.patient_id:
        violations.append("patient_id non-empty")
    if not case.case_id:
        violations.append("case_id non-empty")
    return ValidationReport(tuple(violations), report.missing_fields)
