"""Imitation datasets, loss values and gradients, training loops, and the
derivative-free baseline optimizer."""

import math

import numpy as np
import pytest

from heartmatch.compat import CompatConfig, SurvivalModel, patient_arrays, utilities_for
from heartmatch.learn import (
    BlackboxConfig,
    ImitationExample,
    NumericalError,
    TrainConfig,
    blackbox_optimize,
    build_dataset,
    fit_scaler,
    grad_check,
    hinge_loss,
    imitation_agreement,
    listwise_loss,
    pairwise_logistic_loss,
    train,
    train_cas,
)
from heartmatch.oracle import build_instance, solve
from heartmatch.policies import CasWeights, FeatureMapId, init_potential_model
from heartmatch.popgen import PopulationConfig, generate_trajectory

from conftest import make_donor, make_patient

CFG = CompatConfig()
MODEL = SurvivalModel()


def _fake_example(features, utilities, chosen, feature_map=FeatureMapId.BLOOD4):
    utilities = np.asarray(utilities, dtype=float)
    features = np.asarray(features, dtype=float)
    pool = tuple(make_patient(f"p{i}") for i in range(len(utilities)))
    return ImitationExample(
        donor=make_donor(),
        time=1,
        horizon_days=30,
        feature_map=feature_map,
        pool=pool,
        chosen_index=chosen,
        utilities=utilities,
        features=features,
    )


def _training_trajectories(n=2, horizon=25):
    return [generate_trajectory(PopulationConfig(rng_seed=500 + i, initial_waitlist_size=15), horizon) for i in range(n)]


def test_build_dataset_mirrors_oracle_matches():
    trajs = _training_trajectories(2)
    data = build_dataset(trajs, CFG, MODEL, FeatureMapId.BLOOD4)
    expected = sum(len(solve(build_instance(t, CFG, MODEL)).matches) for t in trajs)
    assert len(data) == expected
    assert expected > 10
    picks = {}
    for t in trajs:
        for m in solve(build_instance(t, CFG, MODEL)).matches:
            picks[m.donor_id] = m.patient_id
    for ex in data:
        assert ex.pool[ex.chosen_index].patient_id == picks[ex.donor.donor_id]
        assert ex.features.shape == (len(ex.pool), 4)
        assert ex.utilities.shape == (len(ex.pool),)
        # utilities must be bitwise what the shared kernel reports
        recomputed = utilities_for(ex.donor, patient_arrays(ex.pool), MODEL)
        assert np.array_equal(ex.utilities, recomputed)
        assert ex.utilities[ex.chosen_index] > 0.0


def test_hinge_loss_by_hand():
    ex = _fake_example(np.eye(3, 4), [2.0, 1.5, 0.2], chosen=0)
    m = init_potential_model(FeatureMapId.BLOOD4)
    theta = np.array([0.1, -0.2, 0.3, 0.0])
    # scores s = u - F theta = [1.9, 1.7, -0.1]; only the second pair is active
    value, grad = hinge_loss(theta, [ex], m)
    assert value == pytest.approx(0.8, rel=1e-12)
    assert grad.tolist() == [1.0, -1.0, 0.0, 0.0]


def test_pairwise_loss_by_hand():
    ex = _fake_example(np.eye(3, 4), [2.0, 1.5, 0.2], chosen=0)
    m = init_potential_model(FeatureMapId.BLOOD4)
    theta = np.array([0.1, -0.2, 0.3, 0.0])
    value, _ = pairwise_logistic_loss(theta, [ex], m)
    want = math.log1p(math.exp(-0.2)) + math.log1p(math.exp(-2.0))
    assert value == pytest.approx(want, rel=1e-12)


def test_listwise_loss_by_hand():
    ex = _fake_example(np.eye(3, 4), [2.0, 1.5, 0.2], chosen=0)
    m = init_potential_model(FeatureMapId.BLOOD4)
    theta = np.array([0.1, -0.2, 0.3, 0.0])
    value, _ = listwise_loss(theta, [ex], m)
    s = np.array([1.9, 1.7, -0.1])
    want = math.log(np.exp(s).sum()) - 1.9
    assert value == pytest.approx(want, rel=1e-12)


def test_l2_term_added_to_value_and_grad():
    ex = _fake_example(np.eye(2, 4), [1.0, 0.5], chosen=0)
    m = init_potential_model(FeatureMapId.BLOOD4)
    theta = np.array([2.0, -1.0, 0.0, 3.0])
    bare, bare_grad = listwise_loss(theta, [ex], m, l2=0.0)
    reg, reg_grad = listwise_loss(theta, [ex], m, l2=0.5)
    assert reg == pytest.approx(bare + 0.25 * float(theta @ theta), rel=1e-12)
    assert np.allclose(reg_grad, bare_grad + 0.5 * theta, rtol=1e-12, atol=0)


def test_importance_weighting_scales_pair_losses_only():
    # utility gap 2.5 but score margin still active
    ex = _fake_example(np.eye(2, 4), [3.0, 0.5], chosen=0)
    m = init_potential_model(FeatureMapId.BLOOD4)
    theta = np.array([2.8, 0.5, 0.0, 0.0])  # scores [0.2, 0.0]
    h0, _ = hinge_loss(theta, [ex], m)
    h1, _ = hinge_loss(theta, [ex], m, importance_weighting=True)
    assert h0 == pytest.approx(0.8, rel=1e-12)
    assert h1 == pytest.approx(2.5 * 0.8, rel=1e-12)
    p0, _ = pairwise_logistic_loss(theta, [ex], m)
    p1, _ = pairwise_logistic_loss(theta, [ex], m, importance_weighting=True)
    assert p1 == pytest.approx(2.5 * p0, rel=1e-12)
    l0, g0 = listwise_loss(theta, [ex], m)
    l1, g1 = listwise_loss(theta, [ex], m, importance_weighting=True)
    assert l1 == l0
    assert np.array_equal(g0, g1)


def test_losses_are_convex_for_linear_scorers():
    # midpoint inequality on random parameter pairs; holds with and without
    # the quadratic penalty
    data = build_dataset(_training_trajectories(1), CFG, MODEL, FeatureMapId.BLOOD4)
    m = init_potential_model(FeatureMapId.BLOOD4)
    rng = np.random.default_rng(21)
    for loss in (hinge_loss, pairwise_logistic_loss, listwise_loss):
        for l2 in (0.0, 0.3):
            for _ in range(25):
                a = rng.normal(scale=2.0, size=4)
                b = rng.normal(scale=2.0, size=4)
                batch = [data[i] for i in rng.integers(0, len(data), size=5)]
                fa, _ = loss(a, batch, m, l2=l2)
                fb, _ = loss(b, batch, m, l2=l2)
                fm, _ = loss((a + b) / 2, batch, m, l2=l2)
                assert fm <= (fa + fb) / 2 + 1e-9


def test_grad_check_linear_all_losses():
    data = build_dataset(_training_trajectories(1), CFG, MODEL, FeatureMapId.BLOOD4)
    m = init_potential_model(FeatureMapId.BLOOD4)
    for loss in ("hinge", "pairwise", "listwise"):
        worst = grad_check(m, data[:6], loss, l2=1e-3)
        assert worst < 1e-5, loss


def test_grad_check_small_mlp():
    data = build_dataset(_training_trajectories(1), CFG, MODEL, FeatureMapId.BLOOD4)
    rng = np.random.default_rng(3)
    m0 = init_potential_model(FeatureMapId.BLOOD4, kind="mlp", hidden=(6,), seed=4)
    m = type(m0)(
        feature_map=m0.feature_map,
        kind=m0.kind,
        hidden=m0.hidden,
        params=rng.normal(scale=0.1, size=m0.params.shape),
        scaler_mean=m0.scaler_mean,
        scaler_std=m0.scaler_std,
    )
    assert grad_check(m, data[:4], "listwise", l2=1e-3) < 1e-5


def test_train_reduces_loss():
    data = build_dataset(_training_trajectories(2), CFG, MODEL, FeatureMapId.BLOOD4)
    m0 = init_potential_model(FeatureMapId.BLOOD4)
    tc = TrainConfig(loss="pairwise", epochs=15, batch_size=16, learning_rate=0.05, l2=0.0, dropout=0.0, seed=1)
    before, _ = pairwise_logistic_loss(m0.params, data, m0)
    trained = train(data, m0, tc)
    after, _ = pairwise_logistic_loss(trained.params, data, trained)
    assert after < before
    assert imitation_agreement(trained, data) >= imitation_agreement(m0, data)


def test_train_is_seed_deterministic():
    data = build_dataset(_training_trajectories(1), CFG, MODEL, FeatureMapId.BLOOD4)
    m0 = init_potential_model(FeatureMapId.BLOOD4)
    tc = TrainConfig(loss="hinge", epochs=4, batch_size=8, learning_rate=0.01, seed=7)
    a = train(data, m0, tc)
    b = train(data, m0, tc)
    assert np.array_equal(a.params, b.params)
    c = train(data, m0, TrainConfig(loss="hinge", epochs=4, batch_size=8, learning_rate=0.01, seed=8))
    assert not np.array_equal(a.params, c.params)


def test_train_bakes_scaler_into_mlp():
    data = build_dataset(_training_trajectories(1), CFG, MODEL, FeatureMapId.BLOOD4)
    m0 = init_potential_model(FeatureMapId.BLOOD4, kind="mlp", hidden=(8,), seed=0)
    tc = TrainConfig(epochs=2, batch_size=8, learning_rate=1e-3, seed=0)
    trained = train(data, m0, tc)
    mean, std = fit_scaler(data)
    assert np.array_equal(trained.scaler_mean, mean)
    assert np.array_equal(trained.scaler_std, std)
    # linear models keep the identity scaler
    lin = train(data, init_potential_model(FeatureMapId.BLOOD4), tc)
    assert np.array_equal(lin.scaler_mean, np.zeros(4))
    assert np.array_equal(lin.scaler_std, np.ones(4))


def test_fit_scaler_floors_constant_columns():
    rows = np.array([[1.0, 5.0], [1.0, 7.0], [1.0, 9.0]])
    exs = [_fake_example(rows, [1.0, 0.5, 0.2], chosen=0)]
    mean, std = fit_scaler(exs)
    assert mean.tolist() == [1.0, 7.0]
    assert std[0] == 1.0  # degenerate column must not divide by zero
    assert std[1] == pytest.approx(np.std([5.0, 7.0, 9.0]))


def test_train_rejects_mismatched_or_empty_dataset():
    data = build_dataset(_training_trajectories(1), CFG, MODEL, FeatureMapId.BLOOD4)
    tc = TrainConfig(epochs=1)
    with pytest.raises(ValueError):
        train(data, init_potential_model(FeatureMapId.CAS14), tc)
    with pytest.raises(ValueError):
        train([], init_potential_model(FeatureMapId.BLOOD4), tc)
    with pytest.raises(ValueError):
        train_cas(data, CasWeights(np.zeros(14)), tc)


def test_train_raises_numerical_error_on_overflow():
    ex = _fake_example(np.full((2, 4), 10.0), [1.0, 0.5], chosen=0)
    m0 = init_potential_model(FeatureMapId.BLOOD4)
    huge = type(m0)(
        feature_map=m0.feature_map,
        kind=m0.kind,
        hidden=m0.hidden,
        params=np.full(4, 1e308),
        scaler_mean=m0.scaler_mean,
        scaler_std=m0.scaler_std,
    )
    with np.errstate(all="ignore"), pytest.raises(NumericalError):
        train([ex], huge, TrainConfig(loss="hinge", epochs=1, batch_size=1, learning_rate=1e-4))


def test_train_cas_runs_and_is_deterministic():
    data = build_dataset(_training_trajectories(2), CFG, MODEL, FeatureMapId.CAS14)
    tc = TrainConfig(loss="pairwise", epochs=6, batch_size=16, learning_rate=0.02, seed=3)
    w0 = CasWeights(np.zeros(14))
    a = train_cas(data, w0, tc)
    b = train_cas(data, w0, tc)
    assert a.weights.shape == (14,)
    assert np.array_equal(a.weights, b.weights)
    loss0, _ = _cas_loss(w0.weights, data)
    loss1, _ = _cas_loss(a.weights, data)
    assert loss1 < loss0


def _cas_loss(weights, data):
    from heartmatch.learn import _CasScorer, _loss_generic

    return _loss_generic(weights, data, _CasScorer(), "pairwise", 0.0, False)


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(loss="absolute")
    with pytest.raises(ValueError):
        TrainConfig(epochs=0)
    with pytest.raises(ValueError):
        TrainConfig(learning_rate=0.0)
    with pytest.raises(ValueError):
        TrainConfig(dropout=1.0)


def test_imitation_agreement_potentials_and_cas():
    ex = _fake_example(np.eye(2, 4), [5.0, 1.0], chosen=0)
    zero = init_potential_model(FeatureMapId.BLOOD4)
    assert imitation_agreement(zero, [ex]) == 1.0
    flipped = type(zero)(
        feature_map=zero.feature_map,
        kind=zero.kind,
        hidden=zero.hidden,
        params=np.array([10.0, 0.0, 0.0, 0.0]),
        scaler_mean=zero.scaler_mean,
        scaler_std=zero.scaler_std,
    )
    assert imitation_agreement(flipped, [ex]) == 0.0
    cas_ex = _fake_example(np.eye(2, 14), [5.0, 1.0], chosen=0, feature_map=FeatureMapId.CAS14)
    w = np.zeros(14)
    w[0] = 1.0
    assert imitation_agreement(CasWeights(w), [cas_ex]) == 1.0
    with pytest.raises(ValueError):
        imitation_agreement(zero, [])


def test_blackbox_budget_and_incumbent():
    calls = []

    def objective(x):
        calls.append(x.copy())
        return -float(np.sum((x - 1.0) ** 2))

    bc = BlackboxConfig(budget=60, seed=2)
    res = blackbox_optimize(objective, dims=3, bc=bc)
    assert len(calls) == 60
    assert res.n_evaluations == 60
    assert len(res.values_seen) == 60
    assert res.value == max(res.values_seen)
    assert res.value == objective.__wrapped__(res.theta) if hasattr(objective, "__wrapped__") else True
    assert np.all(res.theta >= -5.0) and np.all(res.theta <= 5.0)
    assert res.value > -1.0  # optimum 0 at the box interior point (1,1,1)


def test_blackbox_deterministic_given_seed():
    def objective(x):
        return float(np.sin(x).sum())

    a = blackbox_optimize(objective, dims=4, bc=BlackboxConfig(budget=30, seed=9))
    b = blackbox_optimize(objective, dims=4, bc=BlackboxConfig(budget=30, seed=9))
    assert np.array_equal(a.theta, b.theta)
    assert a.values_seen == b.values_seen
    c = blackbox_optimize(objective, dims=4, bc=BlackboxConfig(budget=30, seed=10))
    assert a.values_seen != c.values_seen


def test_blackbox_budget_one():
    res = blackbox_optimize(lambda x: 42.0, dims=2, bc=BlackboxConfig(budget=1, seed=0))
    assert res.n_evaluations == 1
    assert res.value == 42.0


def test_blackbox_config_validation():
    with pytest.raises(ValueError):
        BlackboxConfig(budget=0)
    with pytest.raises(ValueError):
        BlackboxConfig(box_low=2.0, box_high=-2.0)
    with pytest.raises(ValueError):
        BlackboxConfig(init_fraction=0.0)
