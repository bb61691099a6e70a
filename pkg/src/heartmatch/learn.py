"""Training potentials and score weights by imitating the hindsight oracle.

Each training example is one oracle-matched donor decision: the feasible pool
at that moment, cached utilities and features, and the index the oracle chose.
Three losses push the chosen candidate's shaped score above the rest: hinge
(margin 1), pairwise logistic, and listwise softmax cross-entropy. Gradients
are hand-derived; the optimizer is Adam with global-norm clipping.

Also here: a budgeted black-box optimizer (Latin hypercube start, then
Gaussian perturbation around the incumbent with geometric step decay) used to
tune linear score weights directly against simulated lifetime gain, and a
central-finite-difference gradient checker.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable, Sequence

import numpy as np

from . import _mlp
from .compat import CompatConfig, SurvivalModel, patient_arrays, utilities_for
from .domain import (
    DonorArrival,
    DonorRecord,
    PatientArrival,
    PatientDeparture,
    PatientState,
    StatusUpdate,
    Trajectory,
    canonicalize,
)
from .oracle import build_instance, solve
from .policies import (
    FEATURE_DIMS,
    CasWeights,
    FeatureMapId,
    PotentialModel,
    _argmax_lowest_id,
    candidate_pool,
    phi_pool,
    potential_values,
)


class NumericalError(RuntimeError):
    """Raised when training produces non-finite losses or gradients."""


@dataclass(frozen=True)
class ImitationExample:
    donor: DonorRecord
    time: int
    horizon_days: int
    feature_map: FeatureMapId
    pool: tuple[PatientState, ...]
    chosen_index: int
    utilities: np.ndarray  # aligned with pool
    features: np.ndarray   # (len(pool), dim)


def build_dataset(
    trajectories: Sequence[Trajectory],
    cfg: CompatConfig,
    model: SurvivalModel,
    feature_map: FeatureMapId,
) -> list[ImitationExample]:
    """One example per donor the hindsight oracle matched, with the feasible
    pool snapshot at the donor's arrival."""
    out: list[ImitationExample] = []
    for trajectory in trajectories:
        t = canonicalize(trajectory)
        alloc = solve(build_instance(t, cfg, model))
        oracle_pick = {m.donor_id: m.patient_id for m in alloc.matches}

        waitlist: dict[str, PatientState] = {p.patient_id: p for p in t.initial_waitlist}
        for ev in t.events:
            if isinstance(ev, PatientArrival):
                waitlist[ev.patient.patient_id] = ev.patient
            elif isinstance(ev, StatusUpdate):
                state = waitlist.get(ev.patient_id)
                if state is not None:
                    waitlist[ev.patient_id] = state.with_update(
                        severity=ev.severity, cpra=ev.cpra, lvad_days=ev.lvad_days, as_of_time=ev.time
                    )
            elif isinstance(ev, PatientDeparture):
                waitlist.pop(ev.patient_id, None)
            elif isinstance(ev, DonorArrival):
                chosen = oracle_pick.get(ev.donor.donor_id)
                if chosen is None:
                    continue
                pool = candidate_pool(ev.donor, list(waitlist.values()), cfg)
                index = next(i for i, p in enumerate(pool) if p.patient_id == chosen)
                utils = utilities_for(ev.donor, patient_arrays(pool), model)
                features = phi_pool(feature_map, ev.donor, pool, t=ev.time, horizon_days=t.horizon_days, model=model)
                out.append(
                    ImitationExample(
                        donor=ev.donor,
                        time=ev.time,
                        horizon_days=t.horizon_days,
                        feature_map=feature_map,
                        pool=tuple(pool),
                        chosen_index=index,
                        utilities=utils,
                        features=features,
                    )
                )
    return out


# --- scorers: map a parameter vector to per-candidate scores ------------------


class _PotentialScorer:
    """Score = utility - potential(theta, features)."""

    def __init__(self, template: PotentialModel, dropout_rate: float = 0.0, rng: np.random.Generator | None = None):
        self.template = template
        self.dropout_rate = dropout_rate if template.kind == "mlp" else 0.0
        self.rng = rng

    def n_params(self) -> int:
        return self.template.params.size

    def scores(self, theta: np.ndarray, ex: ImitationExample):
        m = self.template
        if m.kind == "linear":
            return ex.utilities - ex.features @ theta, ex.features
        z = (ex.features - m.scaler_mean) / m.scaler_std
        out, cache = _mlp.forward(theta, z, m.dim, m.hidden, dropout_rate=self.dropout_rate, rng=self.rng)
        return ex.utilities - out, cache

    def add_grad(self, grad: np.ndarray, cache, dscore: np.ndarray) -> None:
        # d(score)/d(theta) = -d(potential)/d(theta)
        if self.template.kind == "linear":
            grad -= cache.T @ dscore
        else:
            grad -= _mlp.backward(cache, dscore)


class _CasScorer:
    """Score = weights . features; utility never enters the score."""

    def __init__(self, dim: int = FEATURE_DIMS[FeatureMapId.CAS14]):
        self.dim = dim

    def n_params(self) -> int:
        return self.dim

    def scores(self, theta: np.ndarray, ex: ImitationExample):
        return ex.features @ theta, ex.features

    def add_grad(self, grad: np.ndarray, cache, dscore: np.ndarray) -> None:
        grad += cache.T @ dscore


def _softplus(x: np.ndarray) -> np.ndarray:
    # log(1 + exp(x)) with the standard branch at 0 to avoid overflow
    return np.where(x > 0.0, x + np.log1p(np.exp(-np.abs(x))), np.log1p(np.exp(np.minimum(x, 0.0))))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _pair_weights(ex: ImitationExample, importance_weighting: bool) -> np.ndarray:
    if not importance_weighting:
        return np.ones(len(ex.pool))
    gap = ex.utilities[ex.chosen_index] - ex.utilities
    return np.maximum(1.0, gap)


def _loss_generic(
    theta: np.ndarray,
    batch: Sequence[ImitationExample],
    scorer,
    kind: str,
    l2: float,
    importance_weighting: bool,
) -> tuple[float, np.ndarray]:
    total = 0.0
    grad = np.zeros_like(theta)
    for ex in batch:
        s, cache = scorer.scores(theta, ex)
        c = ex.chosen_index
        n = s.size
        others = np.arange(n) != c
        dscore = np.zeros(n)
        if kind == "hinge":
            w = _pair_weights(ex, importance_weighting)
            margin = 1.0 - (s[c] - s)
            active = others & (margin > 0.0)
            total += float(np.sum(w[active] * margin[active]))
            dscore[active] = w[active]
            dscore[c] = -float(np.sum(w[active]))
        elif kind == "pairwise":
            w = _pair_weights(ex, importance_weighting)
            x = s - s[c]
            sp = _softplus(x)
            sg = _sigmoid(x)
            total += float(np.sum(w[others] * sp[others]))
            dscore[others] = (w * sg)[others]
            dscore[c] = -float(np.sum((w * sg)[others]))
        elif kind == "listwise":
            # importance weighting is pairwise by definition; it is a no-op here
            zmax = s.max()
            z = s - zmax
            logsumexp = zmax + math.log(float(np.sum(np.exp(z))))
            total += float(logsumexp - s[c])
            softmax = np.exp(s - logsumexp)
            dscore = softmax
            dscore[c] -= 1.0
        else:
            raise ValueError(f"unknown loss kind {kind!r}")
        scorer.add_grad(grad, cache, dscore)
    if l2 > 0.0:
        total += 0.5 * l2 * float(theta @ theta)
        grad += l2 * theta
    return total, grad


def hinge_loss(theta, batch, m: PotentialModel, l2: float = 0.0, importance_weighting: bool = False):
    """Sum over examples and non-chosen candidates of max(0, 1 - margin)."""
    return _loss_generic(theta, batch, _PotentialScorer(m), "hinge", l2, importance_weighting)


def pairwise_logistic_loss(theta, batch, m: PotentialModel, l2: float = 0.0, importance_weighting: bool = False):
    """Sum of log(1 + exp(score_other - score_chosen)) over non-chosen candidates."""
    return _loss_generic(theta, batch, _PotentialScorer(m), "pairwise", l2, importance_weighting)


def listwise_loss(theta, batch, m: PotentialModel, l2: float = 0.0, importance_weighting: bool = False):
    """Softmax cross-entropy: -log softmax(scores)[chosen], max-subtracted."""
    return _loss_generic(theta, batch, _PotentialScorer(m), "listwise", l2, importance_weighting)


LOSSES = {"hinge": hinge_loss, "pairwise": pairwise_logistic_loss, "listwise": listwise_loss}


@dataclass(frozen=True)
class TrainConfig:
    loss: str = "pairwise"
    epochs: int = 25
    batch_size: int = 32
    learning_rate: float = 1e-4
    l2: float = 1e-3
    clip_norm: float = 1.0
    dropout: float = 0.3
    importance_weighting: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.loss not in LOSSES:
            raise ValueError(f"loss must be one of {sorted(LOSSES)}")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")


def fit_scaler(dataset: Sequence[ImitationExample]) -> tuple[np.ndarray, np.ndarray]:
    rows = np.vstack([ex.features for ex in dataset])
    mean = rows.mean(axis=0)
    std = rows.std(axis=0)
    std[std < 1e-8] = 1.0
    return mean, std


def _check_dataset(dataset: Sequence[ImitationExample], feature_map: FeatureMapId) -> None:
    if not dataset:
        raise ValueError("dataset is empty")
    for ex in dataset:
        if ex.feature_map is not feature_map:
            raise ValueError(f"dataset built for {ex.feature_map.value}, model needs {feature_map.value}")


def _adam_loop(
    theta0: np.ndarray,
    dataset: Sequence[ImitationExample],
    tc: TrainConfig,
    make_scorer: Callable[[np.random.Generator], object],
) -> np.ndarray:
    theta = theta0.copy()
    adam_m = np.zeros_like(theta)
    adam_v = np.zeros_like(theta)
    beta1, beta2, eps = 0.9, 0.999, 1e-8
    step = 0
    for epoch in range(tc.epochs):
        # counter-based stream: reshuffling and dropout depend only on (seed, epoch)
        rng = np.random.default_rng([tc.seed, epoch])
        order = rng.permutation(len(dataset))
        scorer = make_scorer(rng)
        for lo in range(0, len(order), tc.batch_size):
            batch = [dataset[i] for i in order[lo : lo + tc.batch_size]]
            loss, grad = _loss_generic(theta, batch, scorer, tc.loss, tc.l2, tc.importance_weighting)
            if not np.isfinite(loss) or not np.all(np.isfinite(grad)):
                raise NumericalError(f"non-finite loss or gradient at epoch {epoch}, step {step}")
            norm = float(np.linalg.norm(grad))
            if norm > tc.clip_norm:
                grad = grad * (tc.clip_norm / norm)
            step += 1
            adam_m = beta1 * adam_m + (1 - beta1) * grad
            adam_v = beta2 * adam_v + (1 - beta2) * grad * grad
            mhat = adam_m / (1 - beta1**step)
            vhat = adam_v / (1 - beta2**step)
            theta = theta - tc.learning_rate * mhat / (np.sqrt(vhat) + eps)
    return theta


def train(dataset: Sequence[ImitationExample], m0: PotentialModel, tc: TrainConfig) -> PotentialModel:
    """Imitation-train a potential model; returns a new model with the fitted
    standardizer baked in (MLP kinds) and trained parameters."""
    _check_dataset(dataset, m0.feature_map)
    if m0.kind == "mlp":
        mean, std = fit_scaler(dataset)
        template = replace(m0, scaler_mean=mean, scaler_std=std)
    else:
        template = m0
    theta = _adam_loop(
        template.params,
        dataset,
        tc,
        lambda rng: _PotentialScorer(template, dropout_rate=tc.dropout, rng=rng),
    )
    return replace(template, params=theta)


def train_cas(dataset: Sequence[ImitationExample], w0: CasWeights, tc: TrainConfig) -> CasWeights:
    """Imitation-train linear score weights (score never observes utility)."""
    _check_dataset(dataset, FeatureMapId.CAS14)
    theta = _adam_loop(w0.weights, dataset, tc, lambda rng: _CasScorer())
    return CasWeights(weights=theta)


# --- gradient checking ---------------------------------------------------------


def imitation_agreement(model: PotentialModel | CasWeights, dataset: Sequence[ImitationExample]) -> float:
    """Fraction of examples where the model's top-scored candidate (ties go to
    the lowest patient id, matching the selection rules) is the oracle's pick."""
    if not dataset:
        raise ValueError("dataset is empty")
    hits = 0
    for ex in dataset:
        if isinstance(model, CasWeights):
            scores = ex.features @ model.weights
        else:
            scores = ex.utilities - potential_values(model, ex.features)
        if _argmax_lowest_id(scores, ex.pool) == ex.chosen_index:
            hits += 1
    return hits / len(dataset)


def grad_check(
    m: PotentialModel,
    batch: Sequence[ImitationExample],
    loss: str,
    l2: float = 0.0,
    importance_weighting: bool = False,
) -> float:
    """Max per-parameter relative error between the analytic gradient and
    central finite differences (h = 1e-5 scaled per parameter, dropout off).
    Relative error uses denominator max(|analytic|, |numeric|, 1)."""
    scorer = _PotentialScorer(m)  # no dropout: loss must be deterministic in theta
    theta = m.params.astype(float).copy()

    def f(vec: np.ndarray) -> float:
        value, _ = _loss_generic(vec, batch, scorer, loss, l2, importance_weighting)
        return value

    _, analytic = _loss_generic(theta, batch, scorer, loss, l2, importance_weighting)
    worst = 0.0
    for i in range(theta.size):
        h = 1e-5 * max(1.0, abs(theta[i]))
        up = theta.copy()
        up[i] += h
        down = theta.copy()
        down[i] -= h
        numeric = (f(up) - f(down)) / (2.0 * h)
        rel = abs(analytic[i] - numeric) / max(abs(analytic[i]), abs(numeric), 1.0)
        worst = max(worst, rel)
    return worst


# --- black-box weight search -----------------------------------------------------


@dataclass(frozen=True)
class BlackboxConfig:
    budget: int = 100
    seed: int = 0
    box_low: float = -5.0
    box_high: float = 5.0
    init_fraction: float = 0.2
    sigma_fraction: float = 0.15
    sigma_decay: float = 0.97

    def __post_init__(self):
        if self.budget < 1:
            raise ValueError("budget must be >= 1")
        if not self.box_low < self.box_high:
            raise ValueError("box_low must be < box_high")
        if not 0.0 < self.init_fraction <= 1.0:
            raise ValueError("init_fraction must lie in (0, 1]")


@dataclass(frozen=True)
class BlackboxResult:
    theta: np.ndarray
    value: float
    n_evaluations: int
    values_seen: tuple[float, ...]


def blackbox_optimize(objective: Callable[[np.ndarray], float], dims: int, bc: BlackboxConfig) -> BlackboxResult:
    """Maximize `objective` over a box with exactly `bc.budget` evaluations.

    Phase 1 (20% of budget): Latin hypercube sample. Phase 2: Gaussian
    perturbations around the incumbent, step size a fraction of the box width
    decaying geometrically per evaluation. Deterministic given the seed.
    """
    rng = np.random.default_rng(bc.seed)
    width = bc.box_high - bc.box_low
    n_init = max(1, min(bc.budget, round(bc.budget * bc.init_fraction)))

    lhs = np.empty((n_init, dims))
    for d in range(dims):
        lhs[:, d] = bc.box_low + (rng.permutation(n_init) + rng.uniform(0.0, 1.0, n_init)) / n_init * width

    best_theta: np.ndarray | None = None
    best_value = -np.inf
    seen: list[float] = []
    for row in lhs:
        value = float(objective(row))
        seen.append(value)
        if value > best_value:
            best_value, best_theta = value, row.copy()

    sigma = bc.sigma_fraction * width
    for _ in range(bc.budget - n_init):
        cand = np.clip(best_theta + rng.normal(0.0, sigma, dims), bc.box_low, bc.box_high)
        value = float(objective(cand))
        seen.append(value)
        if value > best_value:
            best_value, best_theta = value, cand
        sigma *= bc.sigma_decay

    return BlackboxResult(theta=best_theta, value=best_value, n_evaluations=len(seen), values_seen=tuple(seen))
