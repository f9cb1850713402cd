import math

import numpy as np
import pytest

from vbdiag.domain import Dataset, Label, Provenance
from vbdiag.evaluation import (
    EmptyInput,
    InvalidCounts,
    LengthMismatch,
    NegativeCrp,
    SingleClassData,
    TooFewGroups,
    agresti_coull,
    band_analysis,
    classification_metrics,
    cross_validate,
    cross_validate_crp_rule,
    crp_rule_predict,
    crp_rule_probas,
    fit_crp_rule,
    grouped_stratified_kfold,
    roc_auc,
)
from vbdiag.learners import ClassifierSpec, Family

from conftest import make_case, random_grouped_dataset, separable_dataset


def auc_pair_counting_oracle(probas, labels):
    """Exhaustive concordant-pair counting, ties worth one half."""
    pos = [p for p, y in zip(probas, labels) if y == 1]
    neg = [p for p, y in zip(probas, labels) if y == 0]
    total = 0.0
    for a in pos:
        for b in neg:
            if a > b:
                total += 1.0
            elif a == b:
                total += 0.5
    return total / (len(pos) * len(neg))


class TestClassificationMetrics:
    def test_perfect(self):
        r = classification_metrics([1.0, 0.0], [1, 0])
        assert r.accuracy == 1.0 and r.brier == 0.0

    def test_half_probabilities(self):
        r = classification_metrics([0.5, 0.5], [1, 0])
        assert r.brier == pytest.approx(0.25)

    def test_spec_arithmetic_example(self):
        r = classification_metrics([0.8, 0.4, 0.3], [1, 1, 0])
        assert r.brier == pytest.approx((0.04 + 0.36 + 0.09) / 3.0)
        assert r.accuracy == pytest.approx(2.0 / 3.0)
        assert r.sensitivity == pytest.approx(0.5)
        assert r.specificity == 1.0

    def test_threshold_boundary_is_bacteria(self):
        r = classification_metrics([0.5], [1])
        assert r.accuracy == 1.0

    def test_absent_class_flagged_not_zeroed(self):
        r = classification_metrics([0.9, 0.2], [1, 1])
        assert r.specificity is None
        assert "specificity_undefined" in r.flags

    def test_errors(self):
        with pytest.raises(LengthMismatch):
            classification_metrics([0.5], [1, 0])
        with pytest.raises(EmptyInput):
            classification_metrics([], [])

    def test_permutation_invariance(self):
        rng = np.random.default_rng(0)
        p = rng.random(50)
        y = (rng.random(50) < 0.5).astype(int)
        perm = rng.permutation(50)
        r1 = classification_metrics(p, y)
        r2 = classification_metrics(p[perm], y[perm])
        assert r1.accuracy == r2.accuracy and r1.brier == pytest.approx(r2.brier)


class TestRocAuc:
    def test_perfect_separation(self):
        _, auc = roc_auc([0.9, 0.8, 0.1, 0.2], [1, 1, 0, 0])
        assert auc == 1.0

    def test_all_tied_scores(self):
        _, auc = roc_auc([0.4, 0.4, 0.4, 0.4], [1, 0, 1, 0])
        assert auc == 0.5

    def test_spec_example(self):
        _, auc = roc_auc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1])
        assert auc == pytest.approx(0.75)

    def test_single_class_raises(self):
        with pytest.raises(SingleClassData):
            roc_auc([0.1, 0.9], [1, 1])

    def test_curve_anchors_and_monotonicity(self):
        rng = np.random.default_rng(1)
        p = rng.random(40)
        y = (rng.random(40) < 0.4).astype(int)
        curve, _ = roc_auc(p, y)
        assert curve.points[0][:2] == (0.0, 0.0)
        assert curve.points[-1][:2] == (1.0, 1.0)
        fprs = [pt[0] for pt in curve.points]
        tprs = [pt[1] for pt in curve.points]
        assert all(b >= a for a, b in zip(fprs, fprs[1:]))
        assert all(b >= a for a, b in zip(tprs, tprs[1:]))

    def test_rank_formula_equals_pair_counting(self):
        rng = np.random.default_rng(2)
        for _ in range(30):
            n = int(rng.integers(4, 60))
            p = np.round(rng.random(n), 2)  # induce ties
            y = (rng.random(n) < 0.5).astype(int)
            if y.min() == y.max():
                y[0] = 1 - y[0]
            _, auc = roc_auc(p, y)
            assert auc == pytest.approx(auc_pair_counting_oracle(p, y), abs=1e-12)


class TestAgrestiCoull:
    def test_symmetric_at_half(self):
        lo, hi = agresti_coull(50, 100)
        assert lo + hi == pytest.approx(1.0, abs=1e-12)

    def test_published_half_width(self):
        lo, hi = agresti_coull(5077, 6176)
        assert (hi - lo) / 2.0 == pytest.approx(0.00954, abs=1e-5)

    def test_zero_successes_clipped(self):
        lo, hi = agresti_coull(0, 10)
        assert lo == 0.0 and hi > 0.0

    def test_contains_point_estimate(self):
        for n in (1, 5, 30, 200):
            for s in range(n + 1):
                lo, hi = agresti_coull(s, n)
                assert lo <= s / n <= hi

    def test_invalid_counts(self):
        with pytest.raises(InvalidCounts):
            agresti_coull(5, 4)
        with pytest.raises(InvalidCounts):
            agresti_coull(-1, 4)


class TestGroupedKfold:
    def test_one_patient_per_fold(self):
        cases = []
        for p in range(10):
            label = Label.BACTERIA if p % 2 else Label.VIRUS
            cases.append(make_case(f"c{p}a", f"p{p}", label))
            cases.append(make_case(f"c{p}b", f"p{p}", label))
        ds = Dataset(tuple(cases))
        fa = grouped_stratified_kfold(ds, 10, seed=0)
        folds_per_patient = {}
        for case in ds.cases:
            folds_per_patient.setdefault(case.patient_id, set()).add(fa.fold_of_case[case.case_id])
        assert all(len(f) == 1 for f in folds_per_patient.values())
        assert sorted({f.pop() for f in folds_per_patient.values()}) == list(range(10))

    def test_same_seed_identical(self):
        rng = np.random.default_rng(3)
        ds = random_grouped_dataset(rng, 40)
        a = grouped_stratified_kfold(ds, 5, seed=9)
        b = grouped_stratified_kfold(ds, 5, seed=9)
        assert a.fold_of_case == b.fold_of_case

    def test_no_group_leakage_sweep(self):
        rng = np.random.default_rng(4)
        for _ in range(100):
            ds = random_grouped_dataset(rng, int(rng.integers(8, 40)))
            k = int(rng.integers(2, 6))
            fa = grouped_stratified_kfold(ds, k, seed=int(rng.integers(0, 1000)))
            per_patient: dict[str, set[int]] = {}
            for case in ds.cases:
                per_patient.setdefault(case.patient_id, set()).add(fa.fold_of_case[case.case_id])
            assert all(len(folds) == 1 for folds in per_patient.values())

    def test_every_case_assigned_once(self):
        rng = np.random.default_rng(5)
        ds = random_grouped_dataset(rng, 25)
        fa = grouped_stratified_kfold(ds, 4, seed=1)
        assert set(fa.fold_of_case) == {c.case_id for c in ds.cases}

    def test_too_few_groups(self):
        ds = Dataset((make_case("c1", "p1", Label.VIRUS), make_case("c2", "p1", Label.VIRUS)))
        with pytest.raises(TooFewGroups):
            grouped_stratified_kfold(ds, 2, seed=0)

    def test_unlabeled_rejected(self):
        ds = Dataset((make_case("c1", "p1", Label.UNLABELED), make_case("c2", "p2", Label.VIRUS)))
        with pytest.raises(Exception, match="unlabeled"):
            grouped_stratified_kfold(ds, 2, seed=0)

    def test_stratification_tolerance_small_groups(self):
        rng = np.random.default_rng(6)
        for _ in range(20):
            ds = random_grouped_dataset(rng, 200, max_cases_per_patient=2, p_bacteria=0.4)
            k = 5
            fa = grouped_stratified_kfold(ds, k, seed=int(rng.integers(0, 100)))
            y = {c.case_id: 1 if c.label is Label.BACTERIA else 0 for c in ds.cases}
            global_rate = sum(y.values()) / len(y)
            for f in range(k):
                ids = [cid for cid, fold in fa.fold_of_case.items() if fold == f]
                rate = sum(y[c] for c in ids) / len(ids)
                assert abs(rate - global_rate) <= 0.05


class TestCrossValidate:
    def test_noise_cases_validated_never_trained(self):
        ds = separable_dataset(60, seed=7)
        noise = frozenset({"c3", "c10"})
        spec = ClassifierSpec(Family.DT, {"max_depth": 2, "min_samples_leaf": 1})
        report = cross_validate(spec, ds, k=5, seed=1, noise_set=noise)
        assert len(report.folds) == 5
        fa = report.fold_assignment
        # noise ids appear in exactly one fold like everyone else
        assert all(cid in fa.fold_of_case for cid in noise)

    def test_perfectly_separable_reaches_one(self):
        ds = separable_dataset(80, seed=8)
        spec = ClassifierSpec(Family.GBT, {"n_rounds": 10, "max_depth": 2})
        report = cross_validate(spec, ds, k=4, seed=2)
        assert report.mean["accuracy"] == 1.0

    def test_bootstrap_cases_never_validated(self):
        base = list(separable_dataset(40, seed=9).cases)
        boot = [
            make_case(f"b{i}", f"bp{i}", Label.BACTERIA,
                      provenance=Provenance.BOOTSTRAP_LABELED, crp=250.0)
            for i in range(10)
        ]
        ds = Dataset(tuple(base + boot))
        spec = ClassifierSpec(Family.DT, {"max_depth": 2})
        report = cross_validate(spec, ds, k=4, seed=3)
        validated = sum(f.n for f in report.folds)
        assert validated == len(base)  # bootstrap cases only augment training

    def test_mean_sd_recomputable(self):
        ds = separable_dataset(50, seed=10)
        spec = ClassifierSpec(Family.KNN, {"k": 3})
        report = cross_validate(spec, ds, k=5, seed=4)
        accs = [f.accuracy for f in report.folds]
        assert report.mean["accuracy"] == pytest.approx(np.mean(accs))
        assert report.sd["accuracy"] == pytest.approx(np.std(accs, ddof=1))


class TestCrpRule:
    def test_spec_example_midpoint(self):
        cases = [
            make_case("v1", "p1", Label.VIRUS, crp=3.0),
            make_case("v2", "p2", Label.VIRUS, crp=5.0),
            make_case("b1", "p3", Label.BACTERIA, crp=30.0),
            make_case("b2", "p4", Label.BACTERIA, crp=50.0),
        ]
        rule = fit_crp_rule(Dataset(tuple(cases)))
        assert rule.threshold == pytest.approx(17.5)
        probas = crp_rule_probas(rule, [3.0, 5.0, 30.0, 50.0])
        assert np.array_equal(probas, [0.0, 0.0, 1.0, 1.0])

    def test_tie_takes_smallest_threshold(self):
        # thresholds between any adjacent pair separate perfectly
        cases = [
            make_case("v1", "p1", Label.VIRUS, crp=1.0),
            make_case("b1", "p2", Label.BACTERIA, crp=9.0),
            make_case("b2", "p3", Label.BACTERIA, crp=11.0),
        ]
        rule = fit_crp_rule(Dataset(tuple(cases)))
        assert rule.threshold == pytest.approx(5.0)  # smallest optimal midpoint

    def test_single_class_raises(self):
        ds = Dataset((make_case("c1", "p1", Label.VIRUS, crp=2.0),
                      make_case("c2", "p2", Label.VIRUS, crp=9.0)))
        with pytest.raises(SingleClassData):
            fit_crp_rule(ds)

    def test_accuracy_matches_brute_force_scan(self):
        rng = np.random.default_rng(11)
        for _ in range(20):
            n = int(rng.integers(4, 40))
            crps = np.round(rng.lognormal(2.0, 1.0, size=n), 1)
            labels = (rng.random(n) < 0.5).astype(int)
            if labels.min() == labels.max():
                labels[0] = 1 - labels[0]
            cases = [
                make_case(f"c{i}", f"p{i}",
                          Label.BACTERIA if labels[i] else Label.VIRUS,
                          crp=float(crps[i]))
                for i in range(n)
            ]
            ds = Dataset(tuple(cases))
            rule = fit_crp_rule(ds)

            def rule_acc(t):
                pred = (crps >= t).astype(int)
                return (pred == labels).mean()

            brute_candidates = [0.0, math.inf] + [
                (a + b) / 2 for a, b in zip(sorted(set(crps)), sorted(set(crps))[1:])
            ] + list(crps)
            assert rule_acc(rule.threshold) == pytest.approx(
                max(rule_acc(t) for t in brute_candidates)
            )

    def test_predict_boundary_and_errors(self):
        from vbdiag.evaluation import CrpRule

        rule = CrpRule(24.0)
        assert crp_rule_predict(rule, 23.0) is Label.VIRUS
        assert crp_rule_predict(rule, 24.0) is Label.BACTERIA
        assert crp_rule_predict(rule, 0.0) is Label.VIRUS
        with pytest.raises(NegativeCrp):
            crp_rule_predict(rule, -1.0)

    def test_rule_cv_report(self):
        ds = separable_dataset(60, seed=12)
        report = cross_validate_crp_rule(ds, k=4, seed=0)
        assert report.mean["accuracy"] == 1.0


class TestBandAnalysis:
    def _band_dataset(self):
        cases = []
        rng = np.random.default_rng(13)
        for i in range(40):
            bact = i % 2 == 0
            crp = float(rng.uniform(10, 40)) if i < 20 else (300.0 if bact else 1.0)
            cases.append(make_case(f"c{i}", f"p{i}",
                                   Label.BACTERIA if bact else Label.VIRUS, crp=crp))
        return Dataset(tuple(cases))

    def test_membership_inclusive(self):
        cases = [
            make_case("c1", "p1", Label.VIRUS, crp=10.0),
            make_case("c2", "p2", Label.BACTERIA, crp=40.0),
            make_case("c3", "p3", Label.VIRUS, crp=9.99),
            make_case("c4", "p4", Label.BACTERIA, crp=40.01),
        ]
        ds = Dataset(tuple(cases))
        from vbdiag.evaluation import CrpRule

        report = band_analysis(ds, [0.1, 0.9, 0.1, 0.9], CrpRule(24.0))
        assert report.n_band == 2

    def test_baselines(self):
        ds = self._band_dataset()
        from vbdiag.evaluation import CrpRule

        probas = [0.9 if c.label is Label.BACTERIA else 0.1 for c in ds.cases]
        report = band_analysis(ds, probas, CrpRule(24.0))
        assert report.p_b + report.p_v == pytest.approx(1.0)
        assert report.random_baseline == pytest.approx(report.p_b**2 + report.p_v**2)
        assert report.prevalent_baseline == pytest.approx(max(report.p_b, report.p_v))
        assert report.random_baseline <= report.prevalent_baseline + 1e-12

    def test_published_band_arithmetic(self):
        p_b, p_v = 0.485, 0.515
        assert p_b**2 + p_v**2 == pytest.approx(0.50045)
        assert max(p_b, p_v) == pytest.approx(0.515)

    def test_single_class_band(self):
        cases = [make_case(f"c{i}", f"p{i}", Label.VIRUS, crp=20.0 + i) for i in range(5)]
        cases.append(make_case("b", "pb", Label.BACTERIA, crp=300.0))
        ds = Dataset(tuple(cases))
        from vbdiag.evaluation import CrpRule

        report = band_analysis(ds, [0.1] * 5 + [0.9], CrpRule(24.0))
        assert report.p_v == 1.0
        assert report.random_baseline == pytest.approx(1.0)
        assert "auc_undefined" in report.flags

    def test_empty_band_flagged(self):
        cases = [make_case("c1", "p1", Label.VIRUS, crp=1.0),
                 make_case("c2", "p2", Label.BACTERIA, crp=300.0)]
        ds = Dataset(tuple(cases))
        from vbdiag.evaluation import CrpRule

        report = band_analysis(ds, [0.2, 0.8], CrpRule(24.0))
        assert report.empty and "empty_band" in report.flags
