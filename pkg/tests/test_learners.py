import numpy as np
import pytest

from vbdiag.learners import (
    ClassifierSpec,
    Family,
    KTooLarge,
    default_spec,
    fit_classifier,
    knn_classify,
    lr_fit,
    scaler_fit_transform,
)


class TestScaler:
    def test_two_point_column(self):
        scaled, _, _ = scaler_fit_transform(np.array([[1.0], [3.0]]))
        assert scaled.tolist() == [[-1.0], [1.0]]

    def test_train_moments(self):
        rng = np.random.default_rng(0)
        X = rng.normal(3.0, 2.5, size=(500, 4))
        scaled, _, _ = scaler_fit_transform(X)
        assert np.all(np.abs(scaled.mean(axis=0)) < 1e-9)
        assert np.all(np.abs(scaled.var(axis=0) - 1.0) < 1e-9)

    def test_constant_column_passes_through_with_flag(self):
        X = np.array([[2.0, 1.0], [2.0, 3.0]])
        scaled, _, scaler = scaler_fit_transform(X)
        assert scaler.constant_features == (0,)
        assert np.all(scaled[:, 0] == 0.0)

    def test_apply_to_uses_train_parameters(self):
        train = np.array([[0.0], [2.0]])
        _, applied, _ = scaler_fit_transform(train, np.array([[1.0]]))
        assert applied.tolist() == [[0.0]]  # equals the train mean


class TestKnn:
    def test_k1_exact_match(self):
        train = np.array([[0.0, 0.0], [5.0, 5.0]])
        labels = np.array([1.0, 0.0])
        assert knn_classify(train, labels, 1, np.array([0.0, 0.0]))[0] == 1.0

    def test_k_equals_n_gives_prevalence(self):
        rng = np.random.default_rng(1)
        train = rng.normal(size=(10, 2))
        labels = (rng.random(10) < 0.3).astype(float)
        p = knn_classify(train, labels, 10, np.zeros(2))[0]
        assert p == pytest.approx(labels.mean())

    def test_two_of_three_neighbors(self):
        train = np.array([[0.0], [0.1], [0.2], [9.0]])
        labels = np.array([1.0, 1.0, 0.0, 0.0])
        assert knn_classify(train, labels, 3, np.array([0.0]))[0] == pytest.approx(2.0 / 3.0)

    def test_distance_ties_broken_by_case_order(self):
        train = np.array([[1.0], [-1.0], [1.0]])
        labels = np.array([1.0, 0.0, 0.0])
        # all three are at distance 1 from the origin: order wins
        assert knn_classify(train, labels, 1, np.array([0.0]))[0] == 1.0

    def test_k_too_large(self):
        with pytest.raises(KTooLarge):
            knn_classify(np.zeros((3, 1)), np.zeros(3), 4, np.zeros(1))

    def test_row_order_invariance_without_ties(self):
        rng = np.random.default_rng(2)
        train = rng.normal(size=(40, 3))
        labels = (rng.random(40) < 0.5).astype(float)
        query = rng.normal(size=(5, 3))
        p1 = knn_classify(train, labels, 7, query)
        perm = rng.permutation(40)
        p2 = knn_classify(train[perm], labels[perm], 7, query)
        assert np.allclose(p1, p2)


class TestLogisticRegression:
    def test_balanced_all_zero_features(self):
        X = np.zeros((4, 2))
        y = np.array([0.0, 1.0, 0.0, 1.0])
        model = lr_fit(X, y, l2_strength=0.1)
        assert np.all(model.coef == 0.0)
        assert model.intercept == pytest.approx(0.0, abs=1e-9)
        assert model.predict_proba(X)[0] == pytest.approx(0.5)

    def test_separable_1d_finite_and_monotone(self):
        X = np.array([[-1.0], [1.0]])
        y = np.array([0.0, 1.0])
        model = lr_fit(X, y, l2_strength=0.05)
        assert np.isfinite(model.coef).all()
        grid = np.linspace(-3, 3, 41).reshape(-1, 1)
        probs = model.predict_proba(grid)
        assert np.all(np.diff(probs) > 0)

    def test_duplicated_feature_symmetry(self):
        rng = np.random.default_rng(3)
        x = rng.normal(size=(120, 1))
        X = np.hstack([x, x])
        y = (x[:, 0] + 0.2 * rng.normal(size=120) > 0).astype(float)
        model = lr_fit(X, y, l2_strength=0.01)
        assert model.coef[0] == pytest.approx(model.coef[1], abs=1e-6)

    def test_objective_non_increasing(self):
        rng = np.random.default_rng(4)
        X = rng.normal(size=(150, 3))
        y = (X @ np.array([1.0, -2.0, 0.5]) > 0).astype(float)
        model = lr_fit(X, y, l2_strength=0.01, max_iters=200)
        path = np.array(model.objective_path)
        assert np.all(np.diff(path) <= 1e-12)

    def test_convergence_flag(self):
        X = np.array([[-1.0], [1.0], [-0.5], [0.5]])
        y = np.array([0.0, 1.0, 0.0, 1.0])
        model = lr_fit(X, y, l2_strength=1.0, max_iters=2000, tol=1e-8)
        assert model.converged
        short = lr_fit(X, y, l2_strength=1.0, max_iters=1, tol=1e-12)
        assert not short.converged

    def test_probabilities_strictly_inside_unit_interval(self):
        X = np.array([[-100.0], [100.0]])
        y = np.array([0.0, 1.0])
        model = lr_fit(X, y, l2_strength=1e-4, max_iters=50)
        probs = model.predict_proba(X)
        assert np.all(probs > 0.0) and np.all(probs < 1.0)


class TestUnifiedContract:
    @pytest.mark.parametrize("family", list(Family))
    def test_every_family_emits_probabilities(self, family):
        rng = np.random.default_rng(5)
        X = rng.normal(size=(80, 4))
        y = (X[:, 0] > 0).astype(float)
        spec = default_spec(family)
        if family is Family.GBT:
            spec = ClassifierSpec(family, {"n_rounds": 10, "max_depth": 3})
        elif family is Family.RF:
            spec = ClassifierSpec(family, {"n_trees": 10, "max_depth": 4, "mtry": 2})
        model = fit_classifier(spec, X, y, seed=1)
        probs = model.predict_proba(X)
        assert probs.shape == (80,)
        assert np.all(probs >= 0.0) and np.all(probs <= 1.0)

    def test_scaling_forced_for_knn_and_lr(self):
        assert ClassifierSpec(Family.KNN).scaling is True
        assert ClassifierSpec(Family.LR, scaling=False).scaling is True
        assert ClassifierSpec(Family.GBT).scaling is False

    def test_scaled_families_carry_scaler(self):
        rng = np.random.default_rng(6)
        X = rng.normal(10.0, 5.0, size=(50, 3))
        y = (X[:, 0] > 10).astype(float)
        model = fit_classifier(ClassifierSpec(Family.KNN, {"k": 3}), X, y)
        assert model.scaler is not None
        single = model.predict_proba(X[0])
        assert single.shape == (1,)
