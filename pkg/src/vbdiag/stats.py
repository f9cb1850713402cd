"""Nonparametric and parametric comparison tests.

Exact p-values are computed by enumeration (sign assignments, label
arrangements, permutations) whenever the problem is small enough;
otherwise normal approximations with tie corrections are used and the
mode is recorded in the result's method notes. Everything here is pure
and depends only on numpy and the standard library.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from itertools import combinations
from typing import Sequence

import numpy as np


class Alternative(Enum):
    TWO_SIDED = "two-sided"
    GREATER = "greater"
    LESS = "less"


class EffectLabel(Enum):
    NONE = "-"
    SMALL = "S"
    MEDIUM = "M"
    LARGE = "L"


class StatsError(ValueError):
    pass


class EmptySample(StatsError):
    pass


class SampleTooSmall(StatsError):
    pass


class ZeroPooledVariance(StatsError):
    pass


@dataclass(frozen=True)
class TestResult:
    statistic: float
    p_value: float
    alternative: Alternative
    method_notes: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if not 0.0 <= self.p_value <= 1.0:
            raise StatsError(f"p-value out of [0,1]: {self.p_value}")


@dataclass(frozen=True)
class EffectSize:
    d: float
    label: EffectLabel


# --- normal and t distribution helpers -------------------------------------

SQRT2 = math.sqrt(2.0)


def normal_cdf(z: float) -> float:
    return 0.5 * (1.0 + math.erf(z / SQRT2))


def normal_quantile(p: float) -> float:
    """Inverse standard normal CDF by bisection refined with Newton."""
    if not 0.0 < p < 1.0:
        raise StatsError(f"quantile argument must be in (0,1), got {p}")
    lo, hi = -40.0, 40.0
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        if normal_cdf(mid) < p:
            lo = mid
        else:
            hi = mid
    z = 0.5 * (lo + hi)
    for _ in range(4):
        pdf = math.exp(-0.5 * z * z) / math.sqrt(2.0 * math.pi)
        if pdf == 0.0:
            break
        z -= (normal_cdf(z) - p) / pdf
    return z


def _beta_cont_frac(a: float, b: float, x: float) -> float:
    # Modified Lentz's method for the incomplete-beta continued fraction.
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < tiny:
        d = tiny
    d = 1.0 / d
    h = d
    for m in range(1, 400):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < 1e-12:
            break
    return h


def reg_inc_beta(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta function I_x(a, b)."""
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    ln_front = (
        math.lgamma(a + b)
        - math.lgamma(a)
        - math.lgamma(b)
        + a * math.log(x)
        + b * math.log(1.0 - x)
    )
    front = math.exp(ln_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _beta_cont_frac(a, b, x) / a
    return 1.0 - front * _beta_cont_frac(b, a, 1.0 - x) / b


def student_t_cdf(t: float, df: float) -> float:
    """Student-t CDF via the regularized incomplete beta function."""
    if df <= 0:
        raise StatsError("degrees of freedom must be positive")
    if t == 0.0:
        return 0.5
    x = df / (df + t * t)
    tail = 0.5 * reg_inc_beta(0.5 * df, 0.5, x)
    return 1.0 - tail if t > 0 else tail


# --- rank helpers -----------------------------------------------------------


def midranks(values: np.ndarray) -> np.ndarray:
    """Ranks (1-based) with ties assigned the group mean rank."""
    order = np.argsort(values, kind="stable")
    ranks = np.empty(len(values), dtype=np.float64)
    i = 0
    sorted_vals = values[order]
    while i < len(values):
        j = i
        while j + 1 < len(values) and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * ((i + 1) + (j + 1))
        i = j + 1
    return ranks


def _doubled_midranks(values: np.ndarray) -> np.ndarray:
    """Midranks times two; exact integers even with ties."""
    order = np.argsort(values, kind="stable")
    ranks = np.empty(len(values), dtype=np.int64)
    i = 0
    sorted_vals = values[order]
    while i < len(values):
        j = i
        while j + 1 < len(values) and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i : j + 1]] = (i + 1) + (j + 1)
        i = j + 1
    return ranks


def _tie_term(values: np.ndarray) -> float:
    """Sum of t^3 - t over tie groups."""
    _, counts = np.unique(values, return_counts=True)
    return float(np.sum(counts.astype(np.float64) ** 3 - counts))


def _finish_two_sided(p_low: float, p_high: float, alternative: Alternative) -> float:
    if alternative is Alternative.GREATER:
        return p_high
    if alternative is Alternative.LESS:
        return p_low
    return min(1.0, 2.0 * min(p_low, p_high))


# --- Wilcoxon signed rank ---------------------------------------------------

WILCOXON_EXACT_LIMIT = 20


def wilcoxon_signed_rank(
    x: Sequence[float],
    y: Sequence[float],
    alternative: Alternative = Alternative.TWO_SIDED,
) -> TestResult:
    """Paired signed-rank test; zero differences are dropped.

    Exact p by enumeration of all sign assignments up to 20 effective
    pairs (computed by dynamic programming over the integer doubled
    ranks), normal approximation with tie correction above.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1 or len(x) < 1:
        raise StatsError("need equal-length 1-D samples with n >= 1")
    d = x - y
    notes: list[str] = []
    nonzero = d != 0
    n_dropped = int(np.sum(~nonzero))
    if n_dropped:
        notes.append(f"zeros_dropped:{n_dropped}")
    d = d[nonzero]
    n = len(d)
    if n == 0:
        notes.append("all_zero_differences")
        return TestResult(0.0, 1.0, alternative, tuple(notes))

    ranks2 = _doubled_midranks(np.abs(d))
    w2 = int(np.sum(ranks2[d > 0]))
    w = w2 / 2.0

    if n <= WILCOXON_EXACT_LIMIT:
        notes.append("exact")
        total2 = int(np.sum(ranks2))
        # counts[s] = number of sign assignments with doubled statistic s
        counts = np.zeros(total2 + 1, dtype=np.float64)
        counts[0] = 1.0
        for r in ranks2:
            shifted = np.zeros_like(counts)
            shifted[r:] = counts[: len(counts) - r]
            counts = counts + shifted
        denom = 2.0**n
        p_high = float(np.sum(counts[w2:]) / denom)
        p_low = float(np.sum(counts[: w2 + 1]) / denom)
    else:
        notes.append("normal_approximation")
        tie = _tie_term(np.abs(d))
        if tie:
            notes.append("ties")
        mean = n * (n + 1) / 4.0
        var = n * (n + 1) * (2 * n + 1) / 24.0 - tie / 48.0
        z = (w - mean) / math.sqrt(var)
        p_high = 1.0 - normal_cdf(z)
        p_low = normal_cdf(z)
    return TestResult(w, _finish_two_sided(p_low, p_high, alternative), alternative, tuple(notes))


# --- paired t ---------------------------------------------------------------


def paired_t(
    x: Sequence[float],
    y: Sequence[float],
    alternative: Alternative = Alternative.TWO_SIDED,
) -> TestResult:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1 or len(x) < 2:
        raise StatsError("need equal-length 1-D samples with n >= 2")
    d = x - y
    n = len(d)
    mean = float(np.mean(d))
    sd = float(np.std(d, ddof=1))
    notes: list[str] = []
    if sd == 0.0:
        notes.append("zero_variance")
        if mean == 0.0:
            return TestResult(0.0, 1.0, alternative, tuple(notes))
        t = math.inf if mean > 0 else -math.inf
        p_high = 0.0 if mean > 0 else 1.0
        p_low = 1.0 - p_high
        return TestResult(t, _finish_two_sided(p_low, p_high, alternative), alternative, tuple(notes))
    t = mean / (sd / math.sqrt(n))
    cdf = student_t_cdf(t, n - 1)
    return TestResult(t, _finish_two_sided(cdf, 1.0 - cdf, alternative), alternative, ())


def bonferroni(p_values: Sequence[float], m: int) -> list[float]:
    """Adjust each p-value to min(1, p * m)."""
    if m < len(p_values):
        raise StatsError(f"m = {m} smaller than the number of p-values ({len(p_values)})")
    return [min(1.0, p * m) for p in p_values]


# --- Mann-Whitney U ---------------------------------------------------------

MWU_EXACT_ARRANGEMENT_LIMIT = 1_000_000


def mann_whitney_u(
    a: Sequence[float],
    b: Sequence[float],
    alternative: Alternative = Alternative.TWO_SIDED,
) -> TestResult:
    """Rank-sum test; U is the statistic of the first sample.

    Exact p by enumerating label arrangements when their count is at
    most 10^6, otherwise normal approximation with tie and continuity
    corrections.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if len(a) == 0 or len(b) == 0:
        raise EmptySample("both samples must be non-empty")
    n1, n2 = len(a), len(b)
    pooled = np.concatenate([a, b])
    ranks2 = _doubled_midranks(pooled)
    u2 = int(np.sum(ranks2[:n1])) - n1 * (n1 + 1)  # doubled U of sample a
    u = u2 / 2.0

    notes: list[str] = []
    if _tie_term(pooled):
        notes.append("ties")

    if math.comb(n1 + n2, n1) <= MWU_EXACT_ARRANGEMENT_LIMIT:
        notes.append("exact")
        base = n1 * (n1 + 1)
        n_low = n_high = 0
        total = 0
        for idx in combinations(range(n1 + n2), n1):
            u2_perm = int(ranks2[list(idx)].sum()) - base
            total += 1
            if u2_perm <= u2:
                n_low += 1
            if u2_perm >= u2:
                n_high += 1
        p_low = n_low / total
        p_high = n_high / total
    else:
        notes.append("normal_approximation")
        n = n1 + n2
        mu = n1 * n2 / 2.0
        tie = _tie_term(pooled)
        sigma2 = n1 * n2 / 12.0 * ((n + 1) - tie / (n * (n - 1)))
        sigma = math.sqrt(sigma2)
        p_high = 1.0 - normal_cdf((u - mu - 0.5) / sigma)
        p_low = normal_cdf((u - mu + 0.5) / sigma)
    return TestResult(u, _finish_two_sided(p_low, p_high, alternative), alternative, tuple(notes))


# --- k-sample Anderson-Darling ----------------------------------------------


def _ad_statistic(pooled_sorted: np.ndarray, sizes: Sequence[int], assignment: np.ndarray) -> float:
    """Tie-adjusted (midrank) k-sample statistic on a pooled sorted array.

    `assignment[i]` is the sample index of pooled_sorted[i].
    """
    n_total = len(pooled_sorted)
    distinct, l_j = np.unique(pooled_sorted, return_counts=True)
    left = np.searchsorted(pooled_sorted, distinct, side="left")
    b_j = left + l_j / 2.0
    denom = b_j * (n_total - b_j) - n_total * l_j / 4.0
    valid = denom > 0
    a2 = 0.0
    for i, n_i in enumerate(sizes):
        sample = np.sort(pooled_sorted[assignment == i])
        m_ij = sample.searchsorted(distinct, side="left") + (
            sample.searchsorted(distinct, side="right") - sample.searchsorted(distinct, side="left")
        ) / 2.0
        num = (n_total * m_ij - n_i * b_j) ** 2
        inner = np.zeros_like(b_j)
        inner[valid] = (l_j[valid] / n_total) * num[valid] / denom[valid]
        a2 += inner.sum() / n_i
    return a2 * (n_total - 1) / n_total


def anderson_darling_k(
    samples: Sequence[Sequence[float]],
    n_permutations: int = 999,
    seed: int = 0,
) -> TestResult:
    """k-sample Anderson-Darling test with a permutation p-value.

    p = (1 + #{permuted statistic >= observed}) / (n_permutations + 1),
    with the sample-label permutations drawn from a seeded generator.
    """
    if len(samples) < 2:
        raise SampleTooSmall("need at least 2 samples")
    arrays = [np.asarray(s, dtype=np.float64) for s in samples]
    if any(len(s) < 2 for s in arrays):
        raise SampleTooSmall("every sample needs at least 2 observations")
    if n_permutations < 1:
        raise StatsError("n_permutations must be >= 1")
    sizes = [len(s) for s in arrays]
    pooled = np.concatenate(arrays)
    assignment = np.concatenate([np.full(n, i) for i, n in enumerate(sizes)])
    order = np.argsort(pooled, kind="stable")
    pooled_sorted = pooled[order]
    observed = _ad_statistic(pooled_sorted, sizes, assignment[order])

    rng = np.random.default_rng(seed)
    n_ge = 0
    for _ in range(n_permutations):
        if _ad_statistic(pooled_sorted, sizes, rng.permutation(assignment)) >= observed:
            n_ge += 1
    p = (1 + n_ge) / (n_permutations + 1)
    return TestResult(observed, p, Alternative.GREATER, (f"permutations:{n_permutations}",))


# --- Cohen's d --------------------------------------------------------------


def cohen_d(a: Sequence[float], b: Sequence[float]) -> EffectSize:
    """Standardized mean difference with the qualitative magnitude label.

    Boundary values 0.2 / 0.5 / 0.8 are assigned to the higher category.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    n1, n2 = len(a), len(b)
    if n1 + n2 < 3 or n1 < 1 or n2 < 1:
        raise SampleTooSmall("need n1 + n2 >= 3")
    v1 = float(np.var(a, ddof=1)) if n1 > 1 else 0.0
    v2 = float(np.var(b, ddof=1)) if n2 > 1 else 0.0
    pooled = ((n1 - 1) * v1 + (n2 - 1) * v2) / (n1 + n2 - 2)
    if pooled <= 0.0:
        raise ZeroPooledVariance("pooled variance is zero")
    d = (float(np.mean(a)) - float(np.mean(b))) / math.sqrt(pooled)
    mag = abs(d)
    if mag < 0.2:
        label = EffectLabel.NONE
    elif mag < 0.5:
        label = EffectLabel.SMALL
    elif mag < 0.8:
        label = EffectLabel.MEDIUM
    else:
        label = EffectLabel.LARGE
    return EffectSize(d, label)
