import math
import random

import numpy as np
import pytest

from conftest import make_donor, make_patient
from heartmatch.compat import (
    CompatConfig,
    MatchClass,
    SurvivalModel,
    blood_compatible,
    consistent_region,
    distance_nm,
    feasible,
    feasible_mask,
    match_class,
    patient_arrays,
    posttransplant_survival_years,
    utilities,
    utilities_for,
    utility,
    waitlist_survival_years,
)
from heartmatch.domain import BloodType, Location

O, A, B, AB = BloodType.O, BloodType.A, BloodType.B, BloodType.AB


def test_abo_compatibility_matrix():
    # donor O -> anyone; A -> A, AB; B -> B, AB; AB -> AB only
    can_give = {
        O: {O, A, B, AB},
        A: {A, AB},
        B: {B, AB},
        AB: {AB},
    }
    for donor in (O, A, B, AB):
        for patient in (O, A, B, AB):
            assert blood_compatible(donor, patient) == (patient in can_give[donor])


def test_match_class():
    assert match_class(O, O) is MatchClass.PRIMARY
    assert match_class(AB, AB) is MatchClass.PRIMARY
    assert match_class(O, A) is MatchClass.SECONDARY
    assert match_class(B, AB) is MatchClass.SECONDARY
    assert match_class(A, O) is MatchClass.INFEASIBLE
    assert match_class(AB, B) is MatchClass.INFEASIBLE


def test_distance_euclidean():
    a = Location(region=1, x=0.0, y=0.0)
    b = Location(region=2, x=3.0, y=4.0)
    assert distance_nm(a, b) == 5.0
    assert distance_nm(a, a) == 0.0
    assert distance_nm(a, b) == distance_nm(b, a)


def test_feasible_blood_and_distance():
    cfg = CompatConfig()
    donor = make_donor(blood=O, x=0.0, y=0.0)
    near = make_patient("p_near", blood=A, x=999.0, y=0.0)
    far = make_patient("p_far", blood=A, x=1000.5, y=0.0)
    wrong_blood = make_patient("p_ab_donor_a", blood=O, x=0.0, y=0.0)
    assert feasible(donor, near, cfg)
    assert not feasible(donor, far, cfg)
    assert not feasible(make_donor(blood=A), wrong_blood, cfg)


def test_region_grid():
    # 3x3 grid at 700 nm spacing: Voronoi boundaries sit halfway, at 350 nm
    cfg = CompatConfig()
    assert len(cfg.region_centroids) == 9
    cx, cy = cfg.region_centroids[0]
    assert consistent_region(Location(region=1, x=cx + 349.0, y=cy), cfg)
    assert not consistent_region(Location(region=1, x=cx + 351.0, y=cy), cfg)
    assert consistent_region(Location(region=2, x=cx + 351.0, y=cy), cfg)


def _hand_utility(donor, patient, model):
    """Independent scalar derivation of the survival gain."""
    lvad_years = patient.lvad_days / 365.25
    wl = model.waitlist_base_years * math.exp(
        -(
            model.waitlist_coeffs[0] * patient.severity
            + model.waitlist_coeffs[1] * patient.cpra
            + model.waitlist_coeffs[2] * lvad_years
        )
    )
    dist = math.sqrt(
        (patient.location.x - donor.location.x) ** 2 + (patient.location.y - donor.location.y) ** 2
    )
    nonidentical = 0.0 if donor.blood_type == patient.blood_type else 1.0
    tc = model.transplant_coeffs
    tx = model.transplant_base_years * math.exp(
        -(
            tc[0] * patient.severity
            + tc[1] * patient.cpra
            + tc[2] * (1.0 - donor.quality)
            + tc[3] * nonidentical
            + tc[4] * (donor.quality * patient.severity)
            + tc[5] * (dist / 1000.0)
        )
    )
    return tx - wl


def test_utility_matches_hand_derivation():
    model = SurvivalModel()
    rng = random.Random(3)
    for _ in range(300):
        donor = make_donor(
            blood=rng.choice((O, A, B, AB)),
            x=rng.uniform(-300, 1700),
            y=rng.uniform(-300, 1700),
            quality=rng.uniform(0.05, 1.0),
        )
        patient = make_patient(
            blood=rng.choice((O, A, B, AB)),
            x=rng.uniform(-300, 1700),
            y=rng.uniform(-300, 1700),
            severity=rng.uniform(0.0, 1.0),
            cpra=rng.uniform(0.0, 1.0),
            lvad_days=rng.randrange(0, 2000),
        )
        got = utility(donor, patient, model)
        want = _hand_utility(donor, patient, model)
        assert got == pytest.approx(want, rel=1e-12, abs=1e-12)


def test_utility_frozen_value():
    # frozen reference for the default model: donor O q=0.8 at origin,
    # patient A sev=0.6 cpra=0.1 lvad=0 at (300, 400)
    model = SurvivalModel()
    donor = make_donor(blood=O, quality=0.8)
    patient = make_patient(blood=A, severity=0.6, cpra=0.1, x=300.0, y=400.0)
    want = 11.0 * math.exp(-(0.6 + 0.025 + 0.16 + 0.06 - 0.072 + 0.04)) - 7.5 * math.exp(-(1.14 + 0.03))
    assert utility(donor, patient, model) == pytest.approx(want, rel=1e-12)
    assert utility(donor, patient, model) == pytest.approx(2.551028351246167, rel=1e-9)


def test_utility_decomposes_into_survival_terms():
    model = SurvivalModel()
    donor = make_donor(blood=O, quality=0.55)
    patient = make_patient(blood=B, severity=0.35, cpra=0.6, lvad_days=400, x=120.0, y=-80.0)
    got = utility(donor, patient, model)
    parts = posttransplant_survival_years(donor, patient, model) - waitlist_survival_years(patient, model)
    assert got == pytest.approx(parts, rel=1e-12)


def test_survival_monotonicity():
    model = SurvivalModel()
    sick = make_patient(severity=0.9)
    mild = make_patient(severity=0.2)
    assert waitlist_survival_years(sick, model) < waitlist_survival_years(mild, model)
    good = make_donor(quality=0.95)
    poor = make_donor(quality=0.2)
    p = make_patient(severity=0.5)
    assert posttransplant_survival_years(good, p, model) > posttransplant_survival_years(poor, p, model)


def test_survival_model_validation():
    with pytest.raises(ValueError):
        SurvivalModel(waitlist_coeffs=(0.0, 0.3, 0.15))  # severity must matter
    with pytest.raises(ValueError):
        SurvivalModel(transplant_coeffs=(1.0, 0.25, 0.1, 0.06, 0.2, 0.08))  # quality slope can flip sign
    with pytest.raises(ValueError):
        SurvivalModel(waitlist_base_years=0.0)
    with pytest.raises(ValueError):
        SurvivalModel(waitlist_coeffs=(1.9, 0.3))


def test_survival_model_dict_round_trip():
    model = SurvivalModel(utility_overrides={("d1", "p1"): 10.0, ("d2", "p9"): -1.5})
    back = SurvivalModel.from_dict(model.to_dict())
    assert back == model


def test_overrides_take_precedence():
    model = SurvivalModel(utility_overrides={("d1", "p1"): 42.0})
    donor = make_donor("d1", blood=O)
    p1 = make_patient("p1", blood=O)
    p2 = make_patient("p2", blood=O)
    vals = utilities(donor, [p1, p2], model)
    assert vals[0] == 42.0
    assert vals[1] != 42.0
    assert utility(donor, p1, model) == 42.0


def test_scalar_equals_vector_bitwise():
    model = SurvivalModel()
    rng = random.Random(19)
    patients = [
        make_patient(
            f"p{i}",
            blood=rng.choice((O, A, B, AB)),
            x=rng.uniform(-300, 1700),
            y=rng.uniform(-300, 1700),
            severity=rng.uniform(0, 1),
            cpra=rng.uniform(0, 1),
            lvad_days=rng.randrange(0, 1500),
        )
        for i in range(64)
    ]
    donor = make_donor(blood=O, x=700.0, y=700.0, quality=0.66)
    cols = patient_arrays(patients)
    vec = utilities_for(donor, cols, model)
    for i, p in enumerate(patients):
        # bit-identical: the scalar path routes through the same kernel
        assert utility(donor, p, model) == vec[i]


def test_feasible_mask_equals_scalar_loop():
    cfg = CompatConfig()
    rng = random.Random(23)
    patients = [
        make_patient(
            f"p{i}",
            blood=rng.choice((O, A, B, AB)),
            region=rng.randrange(1, 10),
            x=rng.uniform(-400, 1800),
            y=rng.uniform(-400, 1800),
        )
        for i in range(80)
    ]
    for donor_blood in (O, A, B, AB):
        donor = make_donor(blood=donor_blood, x=350.0, y=350.0)
        mask = feasible_mask(donor, patient_arrays(patients), cfg)
        want = np.array([feasible(donor, p, cfg) for p in patients])
        assert np.array_equal(mask, want)
