"""Shapley-value explanations in probability units.

The value of a feature coalition is interventional: coalition features
come from the explained instance, the rest from a background sample,
averaged over the background rows. Exact valuation enumerates all
coalitions (bounded feature count); the permutation-sampling estimator
is unbiased for the same quantity and deterministic per seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np


class ExplainError(ValueError):
    pass


class TooManyFeatures(ExplainError):
    pass


class EmptyBackground(ExplainError):
    pass


class UnsortedEdges(ExplainError):
    pass


EXACT_FEATURE_LIMIT = 15

PredictFn = Callable[[np.ndarray], np.ndarray]


def _as_predict_fn(model) -> PredictFn:
    if callable(model):
        return model
    if hasattr(model, "predict_proba"):
        return model.predict_proba
    raise ExplainError("model must be callable or expose predict_proba")


@dataclass(frozen=True)
class ShapleyResult:
    phi: np.ndarray
    base_value: float
    prediction: float

    @property
    def residual(self) -> float:
        """prediction - base_value - sum(phi); zero in exact mode up to
        float error, reported for the sampled estimator."""
        return float(self.prediction - self.base_value - np.sum(self.phi))


@dataclass(frozen=True)
class ImportanceTable:
    entries: tuple[tuple[str, float], ...]  # (feature, mean |phi|), descending
    band: tuple[float, float] | None = None
    n_cases: int = 0
    flags: tuple[str, ...] = ()


def _prepare(instance: np.ndarray, background: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    instance = np.asarray(instance, dtype=np.float64).reshape(-1)
    background = np.asarray(background, dtype=np.float64)
    if background.ndim == 1:
        background = background.reshape(1, -1)
    if len(background) == 0:
        raise EmptyBackground("background sample must be non-empty")
    if background.shape[1] != len(instance):
        raise ExplainError("background and instance feature counts differ")
    return instance, background


def shapley_exact(
    model,
    instance: np.ndarray,
    background: np.ndarray,
    feature_limit: int = EXACT_FEATURE_LIMIT,
) -> ShapleyResult:
    """Brute-force Shapley values over all 2^F coalitions."""
    predict = _as_predict_fn(model)
    instance, background = _prepare(instance, background)
    n_features = len(instance)
    if n_features > feature_limit:
        raise TooManyFeatures(f"{n_features} features exceeds the exact limit of {feature_limit}")
    n_masks = 1 << n_features
    n_bg = len(background)

    # coalition values, batched: v[mask] = mean over background rows of
    # the model on (instance where mask, background elsewhere)
    values = np.empty(n_masks)
    chunk = max(1, 200_000 // max(n_bg, 1))
    for start in range(0, n_masks, chunk):
        masks = np.arange(start, min(start + chunk, n_masks))
        take = (masks[:, None] >> np.arange(n_features)[None, :]) & 1  # (m, F)
        hybrids = np.where(
            take[:, None, :].astype(bool),
            instance[None, None, :],
            background[None, :, :],
        ).reshape(-1, n_features)
        values[masks] = predict(hybrids).reshape(len(masks), n_bg).mean(axis=1)

    sizes = np.zeros(n_masks, dtype=np.int64)
    for j in range(n_features):
        sizes += (np.arange(n_masks) >> j) & 1
    fact = [float(math.factorial(i)) for i in range(n_features + 1)]
    weight_by_size = np.array(
        [fact[s] * fact[n_features - s - 1] / fact[n_features] for s in range(n_features)]
    )

    all_masks = np.arange(n_masks)
    phi = np.empty(n_features)
    for j in range(n_features):
        without_j = all_masks[(all_masks >> j) & 1 == 0]
        gains = values[without_j | (1 << j)] - values[without_j]
        phi[j] = float(np.sum(weight_by_size[sizes[without_j]] * gains))

    return ShapleyResult(phi=phi, base_value=float(values[0]), prediction=float(values[-1]))


def shapley_sampled(
    model,
    instance: np.ndarray,
    background: np.ndarray,
    n_permutations: int = 2000,
    seed: int = 0,
) -> ShapleyResult:
    """Permutation-sampling estimator of the exact values.

    Each permutation walks the features in random order, switching them
    from a background row to the instance; the background rows are
    cycled so the estimator's efficiency residual vanishes whenever
    n_permutations is a multiple of the background size.
    """
    if n_permutations < 1:
        raise ExplainError("n_permutations must be >= 1")
    predict = _as_predict_fn(model)
    instance, background = _prepare(instance, background)
    n_features = len(instance)
    n_bg = len(background)
    rng = np.random.default_rng(seed)

    phi = np.zeros(n_features)
    chunk = max(1, 100_000 // (n_features + 1))
    for start in range(0, n_permutations, chunk):
        count = min(chunk, n_permutations - start)
        perms = np.stack([rng.permutation(n_features) for _ in range(count)])
        bg_rows = background[(start + np.arange(count)) % n_bg]
        # hybrids[t, k] = background row t with features perms[t, :k] replaced
        hybrids = np.repeat(bg_rows[:, None, :], n_features + 1, axis=1)
        for k in range(n_features):
            cols = perms[:, k]
            rows = np.arange(count)
            for step in range(k + 1, n_features + 1):
                hybrids[rows, step, cols] = instance[cols]
        outputs = predict(hybrids.reshape(-1, n_features)).reshape(count, n_features + 1)
        gains = np.diff(outputs, axis=1)  # (count, F), gain of perms[t, k]
        for k in range(n_features):
            np.add.at(phi, perms[:, k], gains[:, k])
    phi /= n_permutations

    base_value = float(np.mean(predict(background)))
    prediction = float(predict(instance.reshape(1, -1))[0])
    return ShapleyResult(phi=phi, base_value=base_value, prediction=prediction)


def explain_instance(
    model,
    instance: np.ndarray,
    background: np.ndarray,
    n_permutations: int = 2000,
    seed: int = 0,
) -> ShapleyResult:
    """Exact valuation when the feature count permits it, the sampling
    estimator otherwise."""
    instance = np.asarray(instance, dtype=np.float64).reshape(-1)
    if len(instance) <= EXACT_FEATURE_LIMIT:
        return shapley_exact(model, instance, background)
    return shapley_sampled(model, instance, background, n_permutations, seed)


def explain_many(
    model,
    data: np.ndarray,
    background: np.ndarray,
    n_permutations: int = 200,
    seed: int = 0,
) -> list[ShapleyResult]:
    data = np.asarray(data, dtype=np.float64)
    if data.ndim == 1:
        data = data.reshape(1, -1)
    instance_seeds = np.random.SeedSequence(seed).generate_state(max(len(data), 1))
    return [
        shapley_sampled(model, row, background, n_permutations, int(instance_seeds[i]))
        for i, row in enumerate(data)
    ]


def global_importance(
    model,
    data: np.ndarray,
    background: np.ndarray,
    feature_names: Sequence[str],
    n_permutations: int = 200,
    seed: int = 0,
    band: tuple[float, float] | None = None,
) -> ImportanceTable:
    """Mean |phi| per feature across a dataset, ranked descending."""
    data = np.asarray(data, dtype=np.float64)
    if data.ndim == 1:
        data = data.reshape(1, -1)
    if data.shape[1] != len(feature_names):
        raise ExplainError("feature_names length must match the data width")
    if len(data) == 0:
        return ImportanceTable((), band=band, n_cases=0, flags=("empty",))
    results = explain_many(model, data, background, n_permutations, seed)
    mean_abs = np.mean(np.abs(np.stack([r.phi for r in results])), axis=0)
    order = np.argsort(-mean_abs, kind="stable")
    entries = tuple((feature_names[i], float(mean_abs[i])) for i in order)
    return ImportanceTable(entries, band=band, n_cases=len(data))


def importance_by_crp_band(
    model,
    data: np.ndarray,
    background: np.ndarray,
    band_edges: Sequence[float],
    feature_names: Sequence[str],
    crp_values: np.ndarray | None = None,
    n_permutations: int = 200,
    seed: int = 0,
) -> list[ImportanceTable]:
    """Per-band global importance; bands are the half-open intervals
    between consecutive edges."""
    edges = list(band_edges)
    if sorted(edges) != edges or len(edges) < 2:
        raise UnsortedEdges("band_edges must be a sorted list of at least two edges")
    data = np.asarray(data, dtype=np.float64)
    if crp_values is None:
        try:
            crp_col = list(feature_names).index("crp")
        except ValueError:
            raise ExplainError("crp_values required when no 'crp' feature exists") from None
        crp_values = data[:, crp_col]
    crp_values = np.asarray(crp_values, dtype=np.float64)

    tables: list[ImportanceTable] = []
    for lo, hi in zip(edges, edges[1:]):
        in_band = (crp_values >= lo) & (crp_values < hi)
        band = (float(lo), float(hi))
        if not in_band.any():
            tables.append(ImportanceTable((), band=band, n_cases=0, flags=("empty_band",)))
            continue
        tables.append(
            global_importance(
                model, data[in_band], background, feature_names,
                n_permutations=n_permutations, seed=seed, band=band,
            )
        )
    return tables


def beeswarm_rows(
    model,
    data: np.ndarray,
    background: np.ndarray,
    feature_names: Sequence[str],
    case_ids: Sequence[str],
    n_permutations: int = 200,
    seed: int = 0,
) -> list[tuple[str, str, float, float]]:
    """Plot-ready rows (case_id, feature, feature value, phi); one row
    per case and feature."""
    data = np.asarray(data, dtype=np.float64)
    results = explain_many(model, data, background, n_permutations, seed)
    rows: list[tuple[str, str, float, float]] = []
    for cid, x, res in zip(case_ids, data, results):
        for j, name in enumerate(feature_names):
            rows.append((cid, name, float(x[j]), float(res.phi[j])))
    return rows
