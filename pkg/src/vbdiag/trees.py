"""Decision tree, random forest and second-order gradient-boosted trees.

All three learners share one exact greedy split engine: feature columns
are argsorted once per fit and the sorted index lists are partitioned
down the tree, so each node's split scan is a handful of vectorized
prefix-sum passes. Candidate thresholds are midpoints between
consecutive distinct sorted values; ties on the split score are broken
by lowest feature index, then lowest threshold, which makes training
deterministic for fixed inputs and seed.

Trees are stored as flat node arrays (explicit child indices) for
vectorized prediction and portable persistence; an equivalent linked
SplitNode/Leaf view is exposed for inspection.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np


class TreeError(ValueError):
    pass


class EmptyData(TreeError):
    pass


class SingleClassData(TreeError):
    pass


class FeatureLengthMismatch(TreeError):
    pass


@dataclass(frozen=True)
class Leaf:
    """Terminal node: smoothed class probability for DT/RF, additive
    log-odds weight for boosting."""

    probability: float | None = None
    class_counts: tuple[float, float] | None = None  # (bacteria, virus)
    weight: float | None = None


@dataclass(frozen=True)
class SplitNode:
    feature_index: int
    threshold: float
    left: "SplitNode | Leaf"
    right: "SplitNode | Leaf"


@dataclass(frozen=True)
class Tree:
    """Binary tree over flat parallel node arrays.

    Node 0 is the root. `feature[i] < 0` marks a leaf; interior nodes
    route `value < threshold` to `left[i]`, else to `right[i]`. For
    leaves, `value[i]` holds the probability (DT/RF) or weight (GBT).
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    count_b: np.ndarray
    count_v: np.ndarray
    n_features: int
    depth: int
    n_leaves: int

    @property
    def root(self) -> SplitNode | Leaf:
        return self._build_node(0)

    def _build_node(self, i: int) -> SplitNode | Leaf:
        if self.feature[i] < 0:
            cb, cv = float(self.count_b[i]), float(self.count_v[i])
            prob = float(self.value[i])
            if cb == 0.0 and cv == 0.0:  # boosting leaf
                return Leaf(weight=prob)
            return Leaf(probability=prob, class_counts=(cb, cv))
        return SplitNode(
            feature_index=int(self.feature[i]),
            threshold=float(self.threshold[i]),
            left=self._build_node(int(self.left[i])),
            right=self._build_node(int(self.right[i])),
        )

    def leaf_indices(self, X: np.ndarray) -> np.ndarray:
        """Vectorized routing: flat node index of the leaf for each row."""
        X = _check_matrix(X, self.n_features)
        node = np.zeros(len(X), dtype=np.int64)
        for _ in range(self.depth + 1):
            feat = self.feature[node]
            active = feat >= 0
            if not active.any():
                break
            rows = np.nonzero(active)[0]
            vals = X[rows, feat[rows]]
            go_left = vals < self.threshold[node[rows]]
            node[rows] = np.where(go_left, self.left[node[rows]], self.right[node[rows]])
        return node

    def predict_value(self, X: np.ndarray) -> np.ndarray:
        return self.value[self.leaf_indices(X)]


def _check_matrix(X: np.ndarray, n_features: int | None = None) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X.reshape(1, -1)
    if n_features is not None and X.shape[1] != n_features:
        raise FeatureLengthMismatch(
            f"expected {n_features} features, got {X.shape[1]}"
        )
    return X


class _FlatBuilder:
    """Accumulates flat node arrays during recursive growth."""

    def __init__(self) -> None:
        self.feature: list[int] = []
        self.threshold: list[float] = []
        self.left: list[int] = []
        self.right: list[int] = []
        self.value: list[float] = []
        self.count_b: list[float] = []
        self.count_v: list[float] = []
        self.max_depth_seen = 0
        self.n_leaves = 0

    def add_leaf(self, value: float, cb: float, cv: float, depth: int) -> int:
        self.feature.append(-1)
        self.threshold.append(0.0)
        self.left.append(-1)
        self.right.append(-1)
        self.value.append(value)
        self.count_b.append(cb)
        self.count_v.append(cv)
        self.max_depth_seen = max(self.max_depth_seen, depth)
        self.n_leaves += 1
        return len(self.feature) - 1

    def add_split(self, feature: int, threshold: float) -> int:
        self.feature.append(feature)
        self.threshold.append(threshold)
        self.left.append(-1)
        self.right.append(-1)
        self.value.append(0.0)
        self.count_b.append(0.0)
        self.count_v.append(0.0)
        return len(self.feature) - 1

    def build(self, n_features: int) -> Tree:
        arrays = dict(
            feature=np.asarray(self.feature, dtype=np.int32),
            threshold=np.asarray(self.threshold, dtype=np.float64),
            left=np.asarray(self.left, dtype=np.int32),
            right=np.asarray(self.right, dtype=np.int32),
            value=np.asarray(self.value, dtype=np.float64),
            count_b=np.asarray(self.count_b, dtype=np.float64),
            count_v=np.asarray(self.count_v, dtype=np.float64),
        )
        for arr in arrays.values():
            arr.setflags(write=False)
        return Tree(
            n_features=n_features,
            depth=self.max_depth_seen,
            n_leaves=self.n_leaves,
            **arrays,
        )


def _partition(
    sorted_lists: dict[int, np.ndarray],
    side: np.ndarray,
    rows_left: np.ndarray,
    rows_right: np.ndarray,
) -> tuple[dict[int, np.ndarray], dict[int, np.ndarray]]:
    """Split per-feature sorted row lists by the side marker array."""
    side[rows_left] = 1
    side[rows_right] = 2
    left_lists: dict[int, np.ndarray] = {}
    right_lists: dict[int, np.ndarray] = {}
    for f, idx in sorted_lists.items():
        s = side[idx]
        left_lists[f] = idx[s == 1]
        right_lists[f] = idx[s == 2]
    side[rows_left] = 0
    side[rows_right] = 0
    return left_lists, right_lists


# --- classification trees (Gini / entropy) ----------------------------------


def _class_purity_score(nb_l, nv_l, nb_r, nv_r, criterion: str) -> np.ndarray:
    n_l = nb_l + nv_l
    n_r = nb_r + nv_r
    if criterion == "gini":
        return (nb_l**2 + nv_l**2) / n_l + (nb_r**2 + nv_r**2) / n_r
    # entropy: maximize sum of n_child * (-H(child))
    def neg_weighted_entropy(nb, nv, n):
        with np.errstate(divide="ignore", invalid="ignore"):
            t1 = np.where(nb > 0, nb * np.log(nb / n), 0.0)
            t2 = np.where(nv > 0, nv * np.log(nv / n), 0.0)
        return t1 + t2

    return neg_weighted_entropy(nb_l, nv_l, n_l) + neg_weighted_entropy(nb_r, nv_r, n_r)


class _ClassTreeGrower:
    def __init__(
        self,
        X: np.ndarray,
        y: np.ndarray,
        weights: np.ndarray,
        max_depth: int,
        min_samples_leaf: float,
        criterion: str,
        mtry: int | None = None,
        rng: np.random.Generator | None = None,
    ) -> None:
        self.X = X
        self.wy = weights * y
        self.w = weights
        self.max_depth = max_depth
        self.min_samples_leaf = min_samples_leaf
        self.criterion = criterion
        self.mtry = mtry
        self.rng = rng
        self.builder = _FlatBuilder()
        self.side = np.zeros(len(X), dtype=np.int8)

    def grow(self, sorted_lists: dict[int, np.ndarray], depth: int) -> int:
        rows = sorted_lists[next(iter(sorted_lists))]
        nb = float(self.wy[rows].sum())
        n = float(self.w[rows].sum())
        nv = n - nb
        if depth >= self.max_depth or nb == 0.0 or nv == 0.0 or n < 2 * self.min_samples_leaf:
            return self._leaf(nb, nv, depth)
        best = self._best_split(sorted_lists, nb, nv)
        if best is None:
            return self._leaf(nb, nv, depth)
        f, threshold = best
        node = self.builder.add_split(f, threshold)
        go_left = self.X[sorted_lists[f], f] < threshold
        rows_left = sorted_lists[f][go_left]
        rows_right = sorted_lists[f][~go_left]
        left_lists, right_lists = _partition(sorted_lists, self.side, rows_left, rows_right)
        left_id = self.grow(left_lists, depth + 1)
        right_id = self.grow(right_lists, depth + 1)
        self.builder.left[node] = left_id
        self.builder.right[node] = right_id
        return node

    def _leaf(self, nb: float, nv: float, depth: int) -> int:
        prob = (nb + 1.0) / (nb + nv + 2.0)  # Laplace smoothing
        return self.builder.add_leaf(prob, nb, nv, depth)

    def _candidate_features(self, n_features: int) -> Sequence[int]:
        if self.mtry is None or self.mtry >= n_features:
            return range(n_features)
        picked = self.rng.choice(n_features, size=self.mtry, replace=False)
        return sorted(int(f) for f in picked)

    def _best_split(
        self, sorted_lists: dict[int, np.ndarray], nb: float, nv: float
    ) -> tuple[int, float] | None:
        # The argmax split is taken even at zero immediate purity gain
        # (standard CART behavior; required for XOR-like structure where
        # the first cut only pays off one level deeper).
        best_score = -math.inf
        best: tuple[int, float] | None = None
        for f in self._candidate_features(len(sorted_lists)):
            idx = sorted_lists[f]
            v = self.X[idx, f]
            cut = v[:-1] < v[1:]
            if not cut.any():
                continue
            wb = np.cumsum(self.wy[idx])[:-1]
            wn = np.cumsum(self.w[idx])[:-1]
            total = wn[-1] + self.w[idx[-1]]
            ok = cut & (wn >= self.min_samples_leaf) & ((total - wn) >= self.min_samples_leaf)
            if not ok.any():
                continue
            nb_l, n_l = wb[ok], wn[ok]
            nv_l = n_l - nb_l
            nb_r, nv_r = nb - nb_l, nv - nv_l
            scores = _class_purity_score(nb_l, nv_l, nb_r, nv_r, self.criterion)
            k = int(np.argmax(scores))
            if scores[k] > best_score:
                best_score = float(scores[k])
                pos = np.nonzero(ok)[0][k]
                best = (f, float((v[pos] + v[pos + 1]) / 2.0))
        return best


def _sorted_lists(X: np.ndarray, rows: np.ndarray, features: Sequence[int]) -> dict[int, np.ndarray]:
    return {
        f: rows[np.argsort(X[rows, f], kind="stable")]
        for f in features
    }


def _filter_sorted(
    full_order: dict[int, np.ndarray],
    member: np.ndarray,
    features: Sequence[int],
) -> dict[int, np.ndarray]:
    """Restrict cached full-data sort orders to a row subset."""
    return {f: full_order[f][member[full_order[f]]] for f in features}


def fit_tree(
    X: np.ndarray,
    y: np.ndarray,
    max_depth: int,
    min_samples_leaf: int = 1,
    criterion: str = "gini",
    sample_weight: np.ndarray | None = None,
) -> Tree:
    """Greedy CART classification tree; leaf probabilities are
    Laplace-smoothed (bacteria + 1) / (total + 2)."""
    X = _check_matrix(X)
    y = np.asarray(y, dtype=np.float64)
    if len(X) == 0:
        raise EmptyData("no training rows")
    if criterion not in ("gini", "entropy"):
        raise TreeError(f"unknown criterion {criterion!r}")
    if sample_weight is None:
        sample_weight = np.ones(len(X))
    rows = np.nonzero(sample_weight > 0)[0]
    if len(rows) == 0:
        raise EmptyData("all sample weights are zero")
    grower = _ClassTreeGrower(X, y, sample_weight, max_depth, float(min_samples_leaf), criterion)
    grower.grow(_sorted_lists(X, rows, range(X.shape[1])), 0)
    return grower.builder.build(X.shape[1])


def predict_tree(tree: Tree, X: np.ndarray) -> np.ndarray:
    """Probability of Bacteria from the routed leaf, one value per row."""
    return tree.predict_value(_check_matrix(X, tree.n_features))


# --- random forest ----------------------------------------------------------


@dataclass(frozen=True)
class Forest:
    trees: tuple[Tree, ...]
    n_features: int
    seed: int


def fit_forest(
    X: np.ndarray,
    y: np.ndarray,
    n_trees: int,
    max_depth: int,
    mtry: int,
    seed: int,
    min_samples_leaf: int = 1,
    bootstrap: bool = True,
) -> Forest:
    """Bootstrap-aggregated trees with `mtry` features sampled per split."""
    X = _check_matrix(X)
    y = np.asarray(y, dtype=np.float64)
    if len(X) == 0:
        raise EmptyData("no training rows")
    if n_trees < 1:
        raise TreeError("n_trees must be >= 1")
    if not 1 <= mtry <= X.shape[1]:
        raise TreeError(f"mtry must be in [1, {X.shape[1]}]")
    streams = np.random.SeedSequence(seed).spawn(n_trees)
    all_features = list(range(X.shape[1]))
    full_order = _sorted_lists(X, np.arange(len(X)), all_features)
    trees: list[Tree] = []
    for s in streams:
        rng = np.random.default_rng(s)
        if bootstrap:
            draws = rng.integers(0, len(X), size=len(X))
            weights = np.bincount(draws, minlength=len(X)).astype(np.float64)
            root_lists = _filter_sorted(full_order, weights > 0, all_features)
        else:
            weights = np.ones(len(X))
            root_lists = dict(full_order)
        grower = _ClassTreeGrower(
            X, y, weights, max_depth, float(min_samples_leaf), "gini",
            mtry=mtry, rng=rng,
        )
        grower.grow(root_lists, 0)
        trees.append(grower.builder.build(X.shape[1]))
    return Forest(tuple(trees), X.shape[1], seed)


def predict_forest(forest: Forest, X: np.ndarray) -> np.ndarray:
    """Mean of the member trees' leaf probabilities."""
    X = _check_matrix(X, forest.n_features)
    acc = np.zeros(len(X))
    for tree in forest.trees:
        acc += tree.predict_value(X)
    return acc / len(forest.trees)


# --- gradient boosting ------------------------------------------------------


@dataclass(frozen=True)
class BoostParams:
    n_rounds: int = 200
    max_depth: int = 6
    learning_rate: float = 0.1
    l2_reg: float = 1.0
    min_split_gain: float = 0.0
    min_child_hessian: float = 1.0
    subsample_rows: float = 1.0
    subsample_features: float = 1.0
    seed: int = 0

    def __post_init__(self) -> None:
        if not 0.0 < self.learning_rate <= 1.0:
            raise TreeError("learning_rate must be in (0, 1]")
        if self.l2_reg < 0 or self.min_split_gain < 0:
            raise TreeError("l2_reg and min_split_gain must be >= 0")
        if not (0.0 < self.subsample_rows <= 1.0 and 0.0 < self.subsample_features <= 1.0):
            raise TreeError("subsample fractions must be in (0, 1]")
        if self.n_rounds < 0 or self.max_depth < 0:
            raise TreeError("n_rounds and max_depth must be >= 0")


@dataclass(frozen=True)
class BoostedEnsemble:
    """Additive tree model: probability = sigmoid(base_score +
    learning_rate * sum of routed leaf weights)."""

    base_score: float
    trees: tuple[Tree, ...]
    params: BoostParams
    feature_order: tuple[str, ...]
    train_log_loss: tuple[float, ...] = ()

    @property
    def n_features(self) -> int:
        return len(self.feature_order)


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _log_loss(y: np.ndarray, p: np.ndarray) -> float:
    eps = 1e-15
    p = np.clip(p, eps, 1 - eps)
    return float(-np.mean(y * np.log(p) + (1 - y) * np.log(1 - p)))


class _BoostTreeGrower:
    def __init__(self, X: np.ndarray, g: np.ndarray, h: np.ndarray, params: BoostParams) -> None:
        self.X = X
        self.g = g
        self.h = h
        self.params = params
        self.builder = _FlatBuilder()
        self.side = np.zeros(len(X), dtype=np.int8)
        self.leaf_rows: list[tuple[int, np.ndarray]] = []

    def grow(self, sorted_lists: dict[int, np.ndarray], features: Sequence[int], depth: int) -> int:
        rows = sorted_lists[features[0]]
        g_sum = float(self.g[rows].sum())
        h_sum = float(self.h[rows].sum())
        best = None
        if depth < self.params.max_depth and len(rows) >= 2:
            best = self._best_split(sorted_lists, features, g_sum, h_sum)
        if best is None:
            return self._leaf(rows, g_sum, h_sum, depth)
        f, threshold = best
        node = self.builder.add_split(f, threshold)
        go_left = self.X[sorted_lists[f], f] < threshold
        rows_left = sorted_lists[f][go_left]
        rows_right = sorted_lists[f][~go_left]
        left_lists, right_lists = _partition(sorted_lists, self.side, rows_left, rows_right)
        left_id = self.grow(left_lists, features, depth + 1)
        right_id = self.grow(right_lists, features, depth + 1)
        self.builder.left[node] = left_id
        self.builder.right[node] = right_id
        return node

    def _leaf(self, rows: np.ndarray, g_sum: float, h_sum: float, depth: int) -> int:
        weight = -g_sum / (h_sum + self.params.l2_reg)
        node = self.builder.add_leaf(weight, 0.0, 0.0, depth)
        self.leaf_rows.append((node, rows))
        return node

    def _best_split(
        self,
        sorted_lists: dict[int, np.ndarray],
        features: Sequence[int],
        g_sum: float,
        h_sum: float,
    ) -> tuple[int, float] | None:
        lam = self.params.l2_reg
        parent_term = g_sum * g_sum / (h_sum + lam)
        best_gain = 0.0  # splits with gain < 0 are rejected
        best: tuple[int, float] | None = None
        for f in features:
            idx = sorted_lists[f]
            v = self.X[idx, f]
            cut = v[:-1] < v[1:]
            if not cut.any():
                continue
            gl = np.cumsum(self.g[idx])[:-1]
            hl = np.cumsum(self.h[idx])[:-1]
            hr = h_sum - hl
            ok = cut & (hl >= self.params.min_child_hessian) & (hr >= self.params.min_child_hessian)
            if not ok.any():
                continue
            gl, hl, hr = gl[ok], hl[ok], hr[ok]
            gr = g_sum - gl
            gains = 0.5 * (gl * gl / (hl + lam) + gr * gr / (hr + lam) - parent_term) - self.params.min_split_gain
            k = int(np.argmax(gains))
            if gains[k] > best_gain or (best is None and gains[k] >= best_gain):
                best_gain = float(gains[k])
                pos = np.nonzero(ok)[0][k]
                best = (f, float((v[pos] + v[pos + 1]) / 2.0))
        return best


def split_gain(g_left: float, h_left: float, g_right: float, h_right: float, params: BoostParams) -> float:
    """Second-order gain of a split under the ensemble's regularization."""
    lam = params.l2_reg
    g = g_left + g_right
    h = h_left + h_right
    return 0.5 * (
        g_left * g_left / (h_left + lam)
        + g_right * g_right / (h_right + lam)
        - g * g / (h + lam)
    ) - params.min_split_gain


def fit_gbt(
    X: np.ndarray,
    y: np.ndarray,
    params: BoostParams,
    feature_order: Sequence[str] | None = None,
) -> BoostedEnsemble:
    """Second-order gradient boosting on the logistic loss.

    base_score is the log-odds of the training Bacteria prevalence;
    each round fits a tree to the gradient/hessian pairs of the current
    margins and advances the margins by learning_rate times the leaf
    weights.
    """
    X = _check_matrix(X)
    y = np.asarray(y, dtype=np.float64)
    if len(X) == 0:
        raise EmptyData("no training rows")
    p0 = float(np.mean(y))
    if p0 <= 0.0 or p0 >= 1.0:
        raise SingleClassData("both classes must be present")
    if feature_order is None:
        feature_order = tuple(f"f{i}" for i in range(X.shape[1]))
    base_score = math.log(p0 / (1.0 - p0))

    n, n_features = X.shape
    margins = np.full(n, base_score)
    all_rows = np.arange(n)
    all_features = list(range(n_features))
    full_order = _sorted_lists(X, all_rows, all_features)
    streams = np.random.SeedSequence(params.seed).spawn(max(params.n_rounds, 1))
    trees: list[Tree] = []
    losses: list[float] = [_log_loss(y, _sigmoid(margins))]

    for t in range(params.n_rounds):
        rng = np.random.default_rng(streams[t])
        p = _sigmoid(margins)
        g = p - y
        h = p * (1.0 - p)

        if params.subsample_rows < 1.0:
            k = max(1, int(math.floor(params.subsample_rows * n)))
            rows = np.sort(rng.choice(n, size=k, replace=False))
        else:
            rows = all_rows
        if params.subsample_features < 1.0:
            k = max(1, int(math.floor(params.subsample_features * n_features)))
            features = sorted(int(f) for f in rng.choice(n_features, size=k, replace=False))
        else:
            features = all_features

        if rows is all_rows:
            root_lists = {f: full_order[f] for f in features}
        else:
            member = np.zeros(n, dtype=bool)
            member[rows] = True
            root_lists = _filter_sorted(full_order, member, features)
        grower = _BoostTreeGrower(X, g, h, params)
        grower.grow(root_lists, features, 0)
        tree = grower.builder.build(n_features)
        trees.append(tree)

        # in-sample rows already know their leaf; out-of-sample rows are routed
        leaf_weight = np.zeros(len(tree.value))
        for node, node_rows in grower.leaf_rows:
            margins[node_rows] += params.learning_rate * tree.value[node]
            leaf_weight[node] = 1.0
        if len(rows) < n:
            mask = np.ones(n, dtype=bool)
            mask[rows] = False
            rest = all_rows[mask]
            margins[rest] += params.learning_rate * tree.predict_value(X[rest])
        losses.append(_log_loss(y, _sigmoid(margins)))

    return BoostedEnsemble(
        base_score=base_score,
        trees=tuple(trees),
        params=params,
        feature_order=tuple(feature_order),
        train_log_loss=tuple(losses),
    )


def predict_margin(ensemble: BoostedEnsemble, X: np.ndarray) -> np.ndarray:
    X = _check_matrix(X, ensemble.n_features)
    margins = np.full(len(X), ensemble.base_score)
    for tree in ensemble.trees:
        margins += ensemble.params.learning_rate * tree.predict_value(X)
    return margins


def predict_gbt(ensemble: BoostedEnsemble, X: np.ndarray) -> np.ndarray:
    """Probability of Bacteria: logistic of the accumulated margin."""
    return _sigmoid(predict_margin(ensemble, X))


def recompute_split_gains(ensemble: BoostedEnsemble, X: np.ndarray, y: np.ndarray) -> list[list[float]]:
    """Replay training margins and recompute every stored split's gain.

    Only valid for ensembles trained with full row sampling, where the
    stored trees saw every training row. Subtree gradient/hessian sums
    are aggregated bottom-up from per-leaf sums (children follow their
    parent in the preorder node arrays).
    """
    if ensemble.params.subsample_rows < 1.0:
        raise TreeError("gain recomputation requires subsample_rows = 1.0")
    X = _check_matrix(X, ensemble.n_features)
    y = np.asarray(y, dtype=np.float64)
    margins = np.full(len(X), ensemble.base_score)
    per_tree: list[list[float]] = []
    for tree in ensemble.trees:
        p = _sigmoid(margins)
        g = p - y
        h = p * (1.0 - p)
        leaves = tree.leaf_indices(X)
        n_nodes = len(tree.feature)
        g_sub = np.bincount(leaves, weights=g, minlength=n_nodes)
        h_sub = np.bincount(leaves, weights=h, minlength=n_nodes)
        for node in reversed(range(n_nodes)):
            if tree.feature[node] >= 0:
                g_sub[node] = g_sub[tree.left[node]] + g_sub[tree.right[node]]
                h_sub[node] = h_sub[tree.left[node]] + h_sub[tree.right[node]]
        gains = [
            split_gain(
                g_sub[tree.left[n]], h_sub[tree.left[n]],
                g_sub[tree.right[n]], h_sub[tree.right[n]],
                ensemble.params,
            )
            for n in range(n_nodes)
            if tree.feature[n] >= 0
        ]
        per_tree.append(gains)
        margins += ensemble.params.learning_rate * tree.value[leaves]
    return per_tree
