"""Shared fixtures: small synthetic cohorts and dataset builders."""

from dataclasses import replace

import numpy as np
import pytest

from vbdiag.domain import BloodPanel, Case, Dataset, Label, Provenance, Sex
from vbdiag.generator import default_generator_config, generate_cohort


@pytest.fixture(scope="session")
def default_config():
    return default_generator_config()


@pytest.fixture(scope="session")
def cohort_2k(default_config):
    return generate_cohort(default_config, 2000, 42)


BASE_PANEL = BloodPanel(
    wbc=8.1,
    neutrophils_count=5.33,
    lymphocyte_count=1.38,
    monocyte_count=0.56,
    neutrophils_pct=5.33 / 8.1,
    lymphocyte_pct=1.38 / 8.1,
    monocyte_pct=0.56 / 8.1,
    rbc=4.37,
    hb=132.0,
    hct=0.393,
    mcv=90.2,
    mch=30.2,
    mchc=333.0,
    rdw=0.138,
    platelet_count=210.0,
    mpv=8.5,
    crp=23.0,
    nlr=5.33 / 1.38,
    age=62.0,
    sex=Sex.FEMALE,
)


def make_case(case_id, patient_id, label, provenance=Provenance.CLINICAL, **panel_overrides):
    panel = replace(BASE_PANEL, **panel_overrides) if panel_overrides else BASE_PANEL
    return Case(patient_id, case_id, panel, label, provenance)


def random_grouped_dataset(rng, n_patients, max_cases_per_patient=4, p_bacteria=0.5):
    """A labeled dataset with multi-case patients; panels are shared
    (irrelevant for grouping tests)."""
    cases = []
    counter = 0
    for p in range(n_patients):
        label = Label.BACTERIA if rng.random() < p_bacteria else Label.VIRUS
        for _ in range(int(rng.integers(1, max_cases_per_patient + 1))):
            cases.append(make_case(f"c{counter}", f"p{p}", label))
            counter += 1
    return Dataset(tuple(cases))


def separable_dataset(n, seed, crp_gap=200.0, n_per_patient=1):
    """Perfectly CRP-separable cases: Bacteria high, Virus low."""
    rng = np.random.default_rng(seed)
    cases = []
    for i in range(n):
        bact = i % 2 == 0
        crp = crp_gap + rng.uniform(0, 50) if bact else rng.uniform(0.5, 5.0)
        cases.append(
            make_case(
                f"c{i}", f"p{i // n_per_patient}",
                Label.BACTERIA if bact else Label.VIRUS,
                crp=crp,
            )
        )
    return Dataset(tuple(cases))
