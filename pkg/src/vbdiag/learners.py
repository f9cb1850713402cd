"""K-nearest neighbors, logistic regression, standard scaling, and the
common probabilistic-classifier contract over all five families.

Every fitted model exposes `predict_proba(X) -> P(Bacteria)`. Scaling is
part of the fitted artifact for the families that need it (KNN, LR), so
callers always pass raw canonical feature matrices.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Mapping

import numpy as np

from . import trees
from .trees import BoostedEnsemble, BoostParams, Forest, Tree


class LearnerError(ValueError):
    pass


class KTooLarge(LearnerError):
    pass


class Family(Enum):
    GBT = "GBT"
    RF = "RF"
    DT = "DT"
    KNN = "KNN"
    LR = "LR"


#: Families whose distance/penalty geometry requires standardized inputs.
SCALED_FAMILIES = (Family.KNN, Family.LR)


@dataclass(frozen=True)
class ClassifierSpec:
    family: Family
    hyperparameters: Mapping[str, Any] = field(default_factory=dict)
    scaling: bool = False

    def __post_init__(self) -> None:
        if self.family in SCALED_FAMILIES and not self.scaling:
            object.__setattr__(self, "scaling", True)
        object.__setattr__(self, "hyperparameters", dict(self.hyperparameters))


@dataclass(frozen=True)
class StandardScaler:
    mean: np.ndarray
    sd: np.ndarray
    constant_features: tuple[int, ...] = ()

    def transform(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        return (X - self.mean) / self.sd


def fit_scaler(train: np.ndarray) -> StandardScaler:
    train = np.asarray(train, dtype=np.float64)
    if len(train) == 0:
        raise LearnerError("cannot fit a scaler on empty data")
    mean = train.mean(axis=0)
    sd = train.std(axis=0)
    constant = tuple(int(i) for i in np.nonzero(sd == 0.0)[0])
    sd = np.where(sd == 0.0, 1.0, sd)  # constant features pass through centered
    return StandardScaler(mean=mean, sd=sd, constant_features=constant)


def scaler_fit_transform(
    train: np.ndarray, apply_to: np.ndarray | None = None
) -> tuple[np.ndarray, np.ndarray | None, StandardScaler]:
    """Fit on train, transform train and (optionally) a second matrix
    with the training parameters only."""
    scaler = fit_scaler(train)
    scaled_train = scaler.transform(train)
    scaled_apply = scaler.transform(apply_to) if apply_to is not None else None
    return scaled_train, scaled_apply, scaler


# --- k-nearest neighbors ----------------------------------------------------


def knn_classify(
    train: np.ndarray, labels: np.ndarray, k: int, query: np.ndarray
) -> np.ndarray:
    """Fraction of Bacteria among the k nearest training points by
    Euclidean distance; distance ties broken by training case order."""
    train = np.asarray(train, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    query = np.asarray(query, dtype=np.float64)
    if query.ndim == 1:
        query = query.reshape(1, -1)
    if k < 1:
        raise LearnerError("k must be >= 1")
    if k > len(train):
        raise KTooLarge(f"k = {k} exceeds the {len(train)} training points")
    out = np.empty(len(query))
    # brute force in chunks sized to bound the (q, train, features)
    # intermediate; stable argsort implements the tie rule
    chunk = max(1, int(5e6) // max(len(train) * train.shape[1], 1))
    for start in range(0, len(query), chunk):
        q = query[start : start + chunk]
        d2 = ((q[:, None, :] - train[None, :, :]) ** 2).sum(axis=2)
        nearest = np.argsort(d2, axis=1, kind="stable")[:, :k]
        out[start : start + len(q)] = labels[nearest].mean(axis=1)
    return out


# --- logistic regression ----------------------------------------------------


@dataclass(frozen=True)
class LogisticModel:
    coef: np.ndarray
    intercept: float
    converged: bool
    n_iterations: int
    objective_path: tuple[float, ...] = ()

    def decision(self, X: np.ndarray) -> np.ndarray:
        return np.asarray(X, dtype=np.float64) @ self.coef + self.intercept

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        return _sigmoid(self.decision(X))


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z, dtype=np.float64)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _lr_objective(X, y, coef, intercept, l2):
    z = X @ coef + intercept
    # mean log(1 + exp(-s*z)) with s = +/-1, computed stably
    s = 2.0 * y - 1.0
    m = -s * z
    nll = float(np.mean(np.logaddexp(0.0, m)))
    return nll + 0.5 * l2 * float(coef @ coef)


def lr_fit(
    X: np.ndarray,
    y: np.ndarray,
    l2_strength: float = 1e-2,
    max_iters: int = 500,
    tol: float = 1e-6,
) -> LogisticModel:
    """L2-penalized logistic regression by full-batch gradient descent
    with backtracking line search; the intercept is not penalized.

    Inputs are expected pre-scaled. Non-convergence sets a flag instead
    of raising.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if len(X) == 0:
        raise LearnerError("cannot fit on empty data")
    n, d = X.shape
    coef = np.zeros(d)
    intercept = 0.0
    obj = _lr_objective(X, y, coef, intercept, l2_strength)
    path = [obj]
    converged = False
    it = 0
    step = 1.0
    for it in range(1, max_iters + 1):
        p = _sigmoid(X @ coef + intercept)
        grad_coef = X.T @ (p - y) / n + l2_strength * coef
        grad_b = float(np.mean(p - y))
        g_norm_inf = max(float(np.max(np.abs(grad_coef))) if d else 0.0, abs(grad_b))
        if g_norm_inf < tol:
            converged = True
            break
        g_sq = float(grad_coef @ grad_coef) + grad_b * grad_b
        step = min(step * 2.0, 1e4)  # allow the step to recover after shrinking
        while step > 1e-16:
            new_coef = coef - step * grad_coef
            new_b = intercept - step * grad_b
            new_obj = _lr_objective(X, y, new_coef, new_b, l2_strength)
            if new_obj <= obj - 1e-4 * step * g_sq:
                break
            step *= 0.5
        coef, intercept, obj = new_coef, new_b, new_obj
        path.append(obj)
    return LogisticModel(
        coef=coef,
        intercept=float(intercept),
        converged=converged,
        n_iterations=it,
        objective_path=tuple(path),
    )


# --- unified fitted-classifier contract -------------------------------------


@dataclass(frozen=True)
class FittedClassifier:
    """A trained model of any family behind one predict_proba surface."""

    spec: ClassifierSpec
    scaler: StandardScaler | None
    model: Any  # BoostedEnsemble | Forest | Tree | LogisticModel | (X, y, k)

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 1:
            X = X.reshape(1, -1)
        if self.scaler is not None:
            X = self.scaler.transform(X)
        family = self.spec.family
        if family is Family.GBT:
            return trees.predict_gbt(self.model, X)
        if family is Family.RF:
            return trees.predict_forest(self.model, X)
        if family is Family.DT:
            return trees.predict_tree(self.model, X)
        if family is Family.LR:
            return self.model.predict_proba(X)
        train, labels, k = self.model
        return knn_classify(train, labels, k, X)


DEFAULT_HYPERPARAMETERS: dict[Family, dict[str, Any]] = {
    Family.GBT: dict(n_rounds=200, max_depth=6, learning_rate=0.1, l2_reg=1.0,
                     min_split_gain=0.0, min_child_hessian=1.0,
                     subsample_rows=1.0, subsample_features=1.0),
    Family.RF: dict(n_trees=200, max_depth=12, mtry=4, min_samples_leaf=1),
    Family.DT: dict(max_depth=8, min_samples_leaf=5, criterion="gini"),
    Family.KNN: dict(k=15),
    Family.LR: dict(l2_strength=1e-2, max_iters=500, tol=1e-6),
}


def default_spec(family: Family) -> ClassifierSpec:
    return ClassifierSpec(family=family, hyperparameters=DEFAULT_HYPERPARAMETERS[family])


def fit_classifier(
    spec: ClassifierSpec,
    X: np.ndarray,
    y: np.ndarray,
    seed: int = 0,
    feature_order: tuple[str, ...] | None = None,
) -> FittedClassifier:
    """Train one model of the requested family on a raw feature matrix."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    params = {**DEFAULT_HYPERPARAMETERS[spec.family], **spec.hyperparameters}
    scaler = None
    if spec.scaling:
        X_scaled, _, scaler = scaler_fit_transform(X)
    else:
        X_scaled = X

    family = spec.family
    if family is Family.GBT:
        model: Any = trees.fit_gbt(
            X_scaled, y, BoostParams(seed=seed, **params), feature_order=feature_order
        )
    elif family is Family.RF:
        model = trees.fit_forest(X_scaled, y, seed=seed, **params)
    elif family is Family.DT:
        model = trees.fit_tree(X_scaled, y, **params)
    elif family is Family.LR:
        model = lr_fit(X_scaled, y, **params)
    elif family is Family.KNN:
        k = int(params["k"])
        if k > len(X_scaled):
            raise KTooLarge(f"k = {k} exceeds the {len(X_scaled)} training points")
        model = (X_scaled, y, k)
    else:  # pragma: no cover
        raise LearnerError(f"unsupported family {family}")
    return FittedClassifier(spec=spec, scaler=scaler, model=model)
