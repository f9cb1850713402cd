import numpy as np
import pytest

from vbdiag.domain import Dataset, Label, Provenance
from vbdiag.learners import ClassifierSpec, Family
from vbdiag.semisup import (
    InvalidThreshold,
    NoiseNotSubset,
    assemble_training,
    bootstrap_label,
    detect_noise,
    label_by_confidence,
)

from conftest import make_case, separable_dataset


def unlabeled_pool(n, seed=0, crp_gap=200.0):
    rng = np.random.default_rng(seed)
    cases = []
    for i in range(n):
        bact_like = i % 2 == 0
        crp = crp_gap + rng.uniform(0, 50) if bact_like else rng.uniform(0.5, 5.0)
        cases.append(make_case(f"u{i}", f"up{i}", Label.UNLABELED, crp=crp))
    return Dataset(tuple(cases))


SPEC = ClassifierSpec(Family.KNN, {"k": 10})


class TestThresholdRule:
    def test_exact_boundary_behavior(self):
        # p = 0.69 discarded, p = 0.70 discarded (strict), p = 0.71 adopted
        adopted, discarded = label_by_confidence(
            ["a", "b", "c"], np.array([0.69, 0.70, 0.71]), threshold=0.70
        )
        assert [cid for cid, _ in adopted] == ["c"]
        assert {cid for cid, _ in discarded} == {"a", "b"}

    def test_low_probability_adopts_virus(self):
        adopted, _ = label_by_confidence(["a"], np.array([0.1]), 0.70)
        assert adopted == [("a", Label.VIRUS)]

    def test_invalid_threshold(self):
        with pytest.raises(InvalidThreshold):
            label_by_confidence([], np.array([]), 0.5)
        with pytest.raises(InvalidThreshold):
            label_by_confidence([], np.array([]), 1.0)

    def test_monotone_in_threshold(self):
        rng = np.random.default_rng(1)
        probas = rng.random(200)
        ids = [f"c{i}" for i in range(200)]
        sizes = []
        for threshold in (0.6, 0.7, 0.8, 0.9):
            adopted, _ = label_by_confidence(ids, probas, threshold)
            sizes.append(len(adopted))
        assert sizes == sorted(sizes, reverse=True)


class TestBootstrapLabel:
    def test_empty_pool(self):
        labeled = separable_dataset(40, seed=1)
        outcome = bootstrap_label(labeled, Dataset(()), SPEC)
        assert len(outcome.labeled_additions) == 0 and outcome.discarded == ()

    def test_confident_pool_fully_adopted(self):
        labeled = separable_dataset(40, seed=2)
        pool = unlabeled_pool(20, seed=3)
        outcome = bootstrap_label(labeled, pool, SPEC, threshold=0.70)
        assert len(outcome.labeled_additions) == 20
        added = {c.case_id: c for c in outcome.labeled_additions.cases}
        for i in range(20):
            expected = Label.BACTERIA if i % 2 == 0 else Label.VIRUS
            assert added[f"u{i}"].label is expected
            assert added[f"u{i}"].provenance is Provenance.BOOTSTRAP_LABELED

    def test_labeled_case_in_pool_rejected(self):
        labeled = separable_dataset(10, seed=4)
        bad_pool = Dataset((make_case("x", "px", Label.VIRUS),))
        with pytest.raises(Exception, match="carries a label"):
            bootstrap_label(labeled, bad_pool, SPEC)

    def test_knn_boundary_probability_discarded(self):
        # k = 10 neighbors, 7 bacteria -> p = 0.7 exactly -> discarded
        cases = [make_case(f"b{i}", f"pb{i}", Label.BACTERIA, crp=100.0 + i) for i in range(7)]
        cases += [make_case(f"v{i}", f"pv{i}", Label.VIRUS, crp=100.0 + 7 + i) for i in range(3)]
        # far-away opposite cluster keeps both classes populated
        cases += [make_case(f"w{i}", f"pw{i}", Label.VIRUS, crp=10000.0 + i) for i in range(10)]
        labeled = Dataset(tuple(cases))
        pool = Dataset((make_case("q", "pq", Label.UNLABELED, crp=103.0),))
        outcome = bootstrap_label(labeled, pool, SPEC, threshold=0.70)
        assert len(outcome.labeled_additions) == 0
        assert outcome.discarded[0][0] == "q"
        assert outcome.discarded[0][1] == pytest.approx(0.7)


class TestDetectNoise:
    def test_clean_separable_data_no_noise(self):
        labeled = separable_dataset(60, seed=5)
        noise = detect_noise(labeled, SPEC, k=5, seed=0)
        assert noise.case_ids == frozenset()

    def test_planted_flip_detected(self):
        cases = list(separable_dataset(60, seed=6).cases)
        # flip one label inside the bacteria-like cluster
        from dataclasses import replace

        flipped = replace(cases[0], label=Label.VIRUS)
        cases[0] = flipped
        noise = detect_noise(Dataset(tuple(cases)), SPEC, k=5, seed=0)
        assert flipped.case_id in noise.case_ids

    def test_deterministic(self):
        labeled = separable_dataset(50, seed=7)
        n1 = detect_noise(labeled, SPEC, k=5, seed=3)
        n2 = detect_noise(labeled, SPEC, k=5, seed=3)
        assert n1.case_ids == n2.case_ids
        assert n1.probability_of_case == n2.probability_of_case

    def test_out_of_fold_probability_recorded_for_all(self):
        labeled = separable_dataset(30, seed=8)
        noise = detect_noise(labeled, SPEC, k=3, seed=1)
        assert set(noise.probability_of_case) == {c.case_id for c in labeled.cases}


class TestAssembleTraining:
    def test_empty_additions_and_noise(self):
        labeled = separable_dataset(20, seed=9)
        outcome = bootstrap_label(labeled, Dataset(()), SPEC)
        noise = detect_noise(labeled, SPEC, k=4, seed=0)
        train, noise_out = assemble_training(labeled, noise, outcome)
        assert [c.case_id for c in train.cases] == [c.case_id for c in labeled.cases]

    def test_additions_appended_sorted(self):
        labeled = separable_dataset(30, seed=10)
        pool = unlabeled_pool(9, seed=11)
        outcome = bootstrap_label(labeled, pool, SPEC)
        noise = detect_noise(labeled, SPEC, k=4, seed=0)
        train, _ = assemble_training(labeled, noise, outcome)
        tail = [c.case_id for c in train.cases[len(labeled):]]
        assert tail == sorted(tail)
        assert all(c.provenance is Provenance.BOOTSTRAP_LABELED for c in train.cases[len(labeled):])

    def test_no_unlabeled_in_final_training(self):
        labeled = separable_dataset(30, seed=12)
        pool = unlabeled_pool(10, seed=13)
        outcome = bootstrap_label(labeled, pool, SPEC)
        noise = detect_noise(labeled, SPEC, k=4, seed=0)
        train, _ = assemble_training(labeled, noise, outcome)
        assert all(c.label is not Label.UNLABELED for c in train.cases)

    def test_noise_not_subset_rejected(self):
        labeled = separable_dataset(10, seed=14)
        from vbdiag.semisup import NoiseSet

        alien = NoiseSet(frozenset({"not-here"}), 0, {"not-here": 0.4})
        outcome = bootstrap_label(labeled, Dataset(()), SPEC)
        with pytest.raises(NoiseNotSubset):
            assemble_training(labeled, alien, outcome)


class TestAuditExport:
    def test_adopted_probabilities_recorded(self):
        labeled = separable_dataset(40, seed=20)
        pool = unlabeled_pool(10, seed=21)
        outcome = bootstrap_label(labeled, pool, SPEC, threshold=0.70)
        prob_of = dict(outcome.adopted_probabilities)
        assert set(prob_of) == {c.case_id for c in outcome.labeled_additions.cases}
        assert all(p > 0.70 for p in prob_of.values())
        # adoption and discard sets are disjoint and cover the pool
        discarded_ids = {cid for cid, _ in outcome.discarded}
        assert not discarded_ids & set(prob_of)
        assert discarded_ids | set(prob_of) == {c.case_id for c in pool.cases}
