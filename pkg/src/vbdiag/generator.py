"""Synthetic cohort generation calibrated to class-conditional
median/IQR summaries.

Primary parameters are sampled independently per class from marginals
fitted to (median, IQR) pairs; the remaining panel values are derived
deterministically (WBC from the differential counts plus an
"other cells" fraction, Hct/Hb/MCH from the red-cell indices, NLR from
the counts), so the consistency identities hold exactly. Each case is
drawn from its own counter-based substream, which makes generation
deterministic and partitionable across workers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from importlib import resources
from pathlib import Path
from typing import Mapping

import numpy as np

from .domain import BloodPanel, Case, Dataset, Label, Provenance, Sex


class GeneratorError(ValueError):
    pass


class NonPositiveMedian(GeneratorError):
    pass


class ResampleExhausted(GeneratorError):
    pass


class MarginalFamily(Enum):
    LOG_NORMAL = "lognormal"
    NORMAL = "normal"
    TRUNCATED_NORMAL = "truncated_normal"


# 2 * z_{0.75}: the quartile spread of the standard normal.
NORMAL_IQR_FACTOR = 1.34898
Z75 = NORMAL_IQR_FACTOR / 2.0

#: Parameters drawn directly from fitted marginals, in draw order.
PRIMARY_PARAMETERS: tuple[str, ...] = (
    "age",
    "neutrophils_count",
    "lymphocyte_count",
    "monocyte_count",
    "rbc",
    "mcv",
    "mchc",
    "rdw",
    "platelet_count",
    "mpv",
    "crp",
)

MAX_RESAMPLE_ATTEMPTS = 100


@dataclass(frozen=True)
class MarginalSpec:
    parameter: str
    family: MarginalFamily
    median: float
    iqr: float
    bounds: tuple[float, float] | None = None

    def __post_init__(self) -> None:
        if self.iqr <= 0:
            raise GeneratorError(f"{self.parameter}: iqr must be > 0")
        if self.bounds is not None:
            lo, hi = self.bounds
            if not lo < hi:
                raise GeneratorError(f"{self.parameter}: bounds must satisfy lo < hi")
            if not lo <= self.median <= hi:
                raise GeneratorError(f"{self.parameter}: median outside bounds")
        if self.family is MarginalFamily.TRUNCATED_NORMAL and self.bounds is None:
            raise GeneratorError(f"{self.parameter}: truncated normal requires bounds")


@dataclass(frozen=True)
class FittedMarginal:
    family: MarginalFamily
    location: float  # mean (normal) or log-median (lognormal)
    scale: float
    bounds: tuple[float, float] | None = None


def _lognormal_sigma(median: float, iqr: float) -> float:
    """Solve 2 * median * sinh(z75 * sigma) = iqr by bisection to 1e-10."""
    target = iqr
    lo, hi = 0.0, 1.0
    while 2.0 * median * math.sinh(Z75 * hi) < target:
        hi *= 2.0
        if hi > 1e6:
            raise GeneratorError("lognormal sigma bisection failed to bracket")
    while hi - lo > 1e-10:
        mid = 0.5 * (lo + hi)
        if 2.0 * median * math.sinh(Z75 * mid) < target:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def fit_marginal(
    median: float,
    iqr: float,
    family: MarginalFamily,
    bounds: tuple[float, float] | None = None,
) -> FittedMarginal:
    if iqr <= 0:
        raise GeneratorError("iqr must be > 0")
    if family is MarginalFamily.LOG_NORMAL:
        if median <= 0:
            raise NonPositiveMedian(f"lognormal requires median > 0, got {median}")
        return FittedMarginal(family, math.log(median), _lognormal_sigma(median, iqr), bounds)
    sd = iqr / NORMAL_IQR_FACTOR
    if family is MarginalFamily.TRUNCATED_NORMAL and bounds is None:
        raise GeneratorError("truncated normal requires bounds")
    return FittedMarginal(family, median, sd, bounds)


def fit_spec(spec: MarginalSpec) -> FittedMarginal:
    return fit_marginal(spec.median, spec.iqr, spec.family, spec.bounds)


def _draw(fitted: FittedMarginal, rng: np.random.Generator, parameter: str) -> float:
    for _ in range(MAX_RESAMPLE_ATTEMPTS):
        if fitted.family is MarginalFamily.LOG_NORMAL:
            value = math.exp(rng.normal(fitted.location, fitted.scale))
        else:
            value = rng.normal(fitted.location, fitted.scale)
        if fitted.bounds is None:
            return value
        lo, hi = fitted.bounds
        if lo <= value <= hi:
            return value
    raise ResampleExhausted(
        f"{parameter}: bounds rejected {MAX_RESAMPLE_ATTEMPTS} consecutive draws"
    )


@dataclass(frozen=True)
class GeneratorConfig:
    marginals: Mapping[Label, Mapping[str, MarginalSpec]]
    male_fraction: float
    other_wbc_fraction_range: tuple[float, float]
    class_prevalence: float  # fraction of Bacteria

    def __post_init__(self) -> None:
        object.__setattr__(
            self,
            "marginals",
            {label: dict(per_class) for label, per_class in self.marginals.items()},
        )
        if not 0.0 < self.male_fraction < 1.0:
            raise GeneratorError("male_fraction must be in (0,1)")
        if not 0.0 < self.class_prevalence < 1.0:
            raise GeneratorError("class_prevalence must be in (0,1)")
        lo, hi = self.other_wbc_fraction_range
        if not 0.0 <= lo < hi < 1.0:
            raise GeneratorError("other_wbc_fraction_range must satisfy 0 <= lo < hi < 1")
        for label in (Label.BACTERIA, Label.VIRUS):
            missing = set(PRIMARY_PARAMETERS) - set(self.marginals.get(label, {}))
            if missing:
                raise GeneratorError(f"{label.value}: missing marginals for {sorted(missing)}")


def load_generator_config(path: str | Path | None = None) -> GeneratorConfig:
    """Parse a generator config (one marginal per line plus global
    lines); without a path, loads the shipped default calibration."""
    if path is None:
        text = resources.files("vbdiag.data").joinpath("generator_default.txt").read_text()
    else:
        text = Path(path).read_text()
    marginals: dict[Label, dict[str, MarginalSpec]] = {Label.BACTERIA: {}, Label.VIRUS: {}}
    male_fraction: float | None = None
    other_range: tuple[float, float] | None = None
    prevalence: float | None = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = [p.strip() for p in line.split(";")]
        key = parts[0].lower()
        if key == "male_fraction":
            male_fraction = float(parts[1])
        elif key == "class_prevalence":
            prevalence = float(parts[1])
        elif key == "other_wbc_fraction":
            other_range = (float(parts[1]), float(parts[2]))
        elif key in ("bacteria", "virus"):
            if len(parts) not in (5, 7):
                raise GeneratorError(f"line {lineno}: expected 5 or 7 fields")
            label = Label.BACTERIA if key == "bacteria" else Label.VIRUS
            bounds = (float(parts[5]), float(parts[6])) if len(parts) == 7 else None
            spec = MarginalSpec(
                parameter=parts[1],
                family=MarginalFamily(parts[2].lower()),
                median=float(parts[3]),
                iqr=float(parts[4]),
                bounds=bounds,
            )
            marginals[label][spec.parameter] = spec
        else:
            raise GeneratorError(f"line {lineno}: unknown entry {parts[0]!r}")
    if male_fraction is None or other_range is None or prevalence is None:
        raise GeneratorError("config must define male_fraction, other_wbc_fraction and class_prevalence")
    return GeneratorConfig(
        marginals=marginals,
        male_fraction=male_fraction,
        other_wbc_fraction_range=other_range,
        class_prevalence=prevalence,
    )


def default_generator_config() -> GeneratorConfig:
    return load_generator_config(None)


def _case_rng(seed: int, index: int) -> np.random.Generator:
    # counter-based substream: any partition of the index range across
    # workers reproduces the identical cohort
    key = ((seed & 0xFFFFFFFFFFFFFFFF) << 64) | index
    return np.random.Generator(np.random.Philox(key=key))


def generate_case(config: GeneratorConfig, fitted: Mapping[Label, Mapping[str, FittedMarginal]],
                  seed: int, index: int) -> Case:
    rng = _case_rng(seed, index)
    label = Label.BACTERIA if rng.random() < config.class_prevalence else Label.VIRUS
    sex = Sex.MALE if rng.random() < config.male_fraction else Sex.FEMALE
    lo, hi = config.other_wbc_fraction_range
    other = rng.uniform(lo, hi)
    drawn = {
        name: _draw(fitted[label][name], rng, name)
        for name in PRIMARY_PARAMETERS
    }
    neut = drawn["neutrophils_count"]
    lymph = drawn["lymphocyte_count"]
    mono = drawn["monocyte_count"]
    wbc = (neut + lymph + mono) / (1.0 - other)
    hct = drawn["mcv"] * drawn["rbc"] / 1000.0
    panel = BloodPanel(
        wbc=wbc,
        neutrophils_count=neut,
        lymphocyte_count=lymph,
        monocyte_count=mono,
        neutrophils_pct=neut / wbc,
        lymphocyte_pct=lymph / wbc,
        monocyte_pct=mono / wbc,
        rbc=drawn["rbc"],
        hb=drawn["mchc"] * hct,
        hct=hct,
        mcv=drawn["mcv"],
        mch=drawn["mchc"] * drawn["mcv"] / 1000.0,
        mchc=drawn["mchc"],
        rdw=drawn["rdw"],
        platelet_count=drawn["platelet_count"],
        mpv=drawn["mpv"],
        crp=drawn["crp"],
        nlr=neut / lymph,
        age=drawn["age"],
        sex=sex,
    )
    return Case(
        patient_id=f"synP{index:07d}",
        case_id=f"synC{index:07d}",
        panel=panel,
        label=label,
        provenance=Provenance.SYNTHETIC,
    )


def generate_cohort(config: GeneratorConfig, n: int, seed: int) -> Dataset:
    """n synthetic cases, one per synthetic patient, deterministic in
    (config, n, seed)."""
    if n < 0:
        raise GeneratorError("n must be >= 0")
    fitted = {
        label: {name: fit_spec(spec) for name, spec in config.marginals[label].items()}
        for label in (Label.BACTERIA, Label.VIRUS)
    }
    return Dataset(tuple(generate_case(config, fitted, seed, i) for i in range(n)))
