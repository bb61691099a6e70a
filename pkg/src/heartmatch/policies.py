"""Allocation policies: myopic, potential-shaped, linear-score, and tiered.

A policy sees one donor at a time plus the feasible candidate pool and either
selects a patient or discards the organ. Potential policies subtract a learned
state-dependent potential from immediate utility and pick the argmax of the
shaped score; the zero-parameter potential reproduces the myopic policy
decision for decision.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np

from . import _mlp
from .compat import (
    CompatConfig,
    MatchClass,
    SurvivalModel,
    distance_nm,
    feasible_mask,
    match_class,
    patient_arrays,
    utilities_for,
    utility,
)
from .domain import BLOOD_INDEX, NUM_REGIONS, DonorRecord, FormatError, PatientState, fmt_real


class FeatureMapId(enum.Enum):
    BLOOD4 = "Blood4"
    BLOOD_REGION13 = "BloodRegion13"
    MATCH_STATE34 = "MatchState34"
    CAS14 = "CAS14"


FEATURE_DIMS = {
    FeatureMapId.BLOOD4: 4,
    FeatureMapId.BLOOD_REGION13: 13,
    FeatureMapId.MATCH_STATE34: 34,
    FeatureMapId.CAS14: 14,
}

# Feature layouts (positions are part of the model-file contract):
#   Blood4:        patient blood one-hot (O, A, B, AB)
#   BloodRegion13: Blood4 + patient region one-hot (regions 1..9)
#   CAS14:         status one-hot (1..6), severity, cpra, wait years,
#                  primary indicator, secondary indicator, lvad years,
#                  donor distance / 1000 nm, same-region indicator
#   MatchState34:  patient blood one-hot (4), patient region one-hot (9),
#                  donor blood one-hot (4), pair utility (1),
#                  pool blood fractions (4), pool region fractions (9),
#                  pool max utility (1), pool mean utility (1), t / horizon (1)


def phi_pool(
    map_id: FeatureMapId,
    donor: DonorRecord,
    pool: Sequence[PatientState],
    t: int,
    horizon_days: int = 1,
    model: SurvivalModel | None = None,
) -> np.ndarray:
    """Feature matrix, one row per pool candidate, in pool order."""
    n = len(pool)
    cols = patient_arrays(pool)
    blood_onehot = np.zeros((n, 4))
    if n:
        blood_onehot[np.arange(n), cols.blood_idx] = 1.0
    if map_id is FeatureMapId.BLOOD4:
        return blood_onehot

    region_onehot = np.zeros((n, NUM_REGIONS))
    if n:
        region_onehot[np.arange(n), cols.region - 1] = 1.0
    if map_id is FeatureMapId.BLOOD_REGION13:
        return np.hstack([blood_onehot, region_onehot])

    if map_id is FeatureMapId.CAS14:
        status_onehot = np.zeros((n, 6))
        if n:
            status_onehot[np.arange(n), cols.status - 1] = 1.0
        wait_years = (t - cols.listed_time) / 365.25
        donor_blood = BLOOD_INDEX[donor.blood_type]
        compat_row = np.array([1.0 if match_class(donor.blood_type, b) is not MatchClass.INFEASIBLE else 0.0 for b in BLOOD_INDEX])
        primary = (cols.blood_idx == donor_blood).astype(float)
        secondary = compat_row[cols.blood_idx] * (1.0 - primary)
        dist = np.hypot(cols.x - donor.location.x, cols.y - donor.location.y)
        same_region = (cols.region == donor.location.region).astype(float)
        return np.column_stack(
            [
                status_onehot,
                cols.severity,
                cols.cpra,
                wait_years,
                primary,
                secondary,
                cols.lvad_days / 365.25,
                dist / 1000.0,
                same_region,
            ]
        )

    if map_id is FeatureMapId.MATCH_STATE34:
        if model is None:
            raise ValueError("MatchState34 features need the survival model")
        if n == 0:
            return np.zeros((0, 34))
        utils = utilities_for(donor, cols, model)
        donor_blood_onehot = np.zeros((n, 4))
        donor_blood_onehot[:, BLOOD_INDEX[donor.blood_type]] = 1.0
        pool_blood_frac = np.tile(blood_onehot.mean(axis=0), (n, 1))
        pool_region_frac = np.tile(region_onehot.mean(axis=0), (n, 1))
        pool_max = np.full((n, 1), utils.max())
        pool_mean = np.full((n, 1), utils.mean())
        time_frac = np.full((n, 1), t / horizon_days)
        return np.hstack(
            [
                blood_onehot,
                region_onehot,
                donor_blood_onehot,
                utils[:, None],
                pool_blood_frac,
                pool_region_frac,
                pool_max,
                pool_mean,
                time_frac,
            ]
        )
    raise ValueError(f"unknown feature map {map_id!r}")


def phi(
    map_id: FeatureMapId,
    donor: DonorRecord,
    patient: PatientState,
    pool: Sequence[PatientState],
    t: int,
    horizon_days: int = 1,
    model: SurvivalModel | None = None,
) -> np.ndarray:
    """Feature vector for one candidate, with pool statistics taken over `pool`."""
    members = list(pool)
    try:
        row = next(i for i, p in enumerate(members) if p.patient_id == patient.patient_id)
    except StopIteration:
        members = [patient, *members]
        row = 0
    return phi_pool(map_id, donor, members, t, horizon_days, model)[row]


@dataclass(frozen=True)
class Selected:
    patient_id: str
    q_score: float


@dataclass(frozen=True)
class Discard:
    reason: str  # "no_candidates" | "nonpositive_utility"


Decision = Union[Selected, Discard]


def candidate_pool(donor: DonorRecord, waitlist: Sequence[PatientState], cfg: CompatConfig) -> list[PatientState]:
    """Feasible candidates (blood compatible, within the distance cap), in
    stable waitlist order."""
    if not waitlist:
        return []
    mask = feasible_mask(donor, patient_arrays(waitlist), cfg)
    return [p for p, ok in zip(waitlist, mask) if ok]


def _argmax_lowest_id(scores: np.ndarray, pool: Sequence[PatientState]) -> int:
    best = scores.max()
    idx = [i for i in range(len(pool)) if scores[i] == best]
    return min(idx, key=lambda i: pool[i].patient_id)


def myopic_select(donor: DonorRecord, pool: Sequence[PatientState], model: SurvivalModel) -> Decision:
    """Greedy: take the highest-utility candidate, discard if none gains."""
    if not pool:
        return Discard("no_candidates")
    utils = utilities_for(donor, patient_arrays(pool), model)
    i = _argmax_lowest_id(utils, pool)
    if utils[i] <= 0.0:
        return Discard("nonpositive_utility")
    return Selected(pool[i].patient_id, float(utils[i]))


# --- potential models -------------------------------------------------------


@dataclass(frozen=True, eq=False)
class PotentialModel:
    """Linear or MLP potential over a feature map, parameters in one flat
    vector. The standardizing scaler is baked in and applied to MLP inputs
    only; linear potentials act on raw (mostly indicator) features."""

    feature_map: FeatureMapId
    kind: str  # "linear" | "mlp"
    hidden: tuple[int, ...]
    params: np.ndarray
    scaler_mean: np.ndarray
    scaler_std: np.ndarray

    def __post_init__(self):
        dim = FEATURE_DIMS[self.feature_map]
        if self.kind not in ("linear", "mlp"):
            raise ValueError(f"unknown potential kind {self.kind!r}")
        if self.kind == "linear":
            if self.hidden:
                raise ValueError("linear potentials take no hidden widths")
            expected = dim
        else:
            if not self.hidden:
                raise ValueError("mlp potentials need at least one hidden width")
            expected = _mlp.param_count(dim, self.hidden)
        if self.params.shape != (expected,):
            raise ValueError(f"params must have shape ({expected},), got {self.params.shape}")
        if self.scaler_mean.shape != (dim,) or self.scaler_std.shape != (dim,):
            raise ValueError(f"scaler stats must have shape ({dim},)")
        if not np.all(self.scaler_std > 0.0):
            raise ValueError("scaler_std entries must be positive")

    @property
    def dim(self) -> int:
        return FEATURE_DIMS[self.feature_map]


def init_potential_model(
    feature_map: FeatureMapId,
    kind: str = "linear",
    hidden: tuple[int, ...] = (),
    seed: int = 0,
) -> PotentialModel:
    """Fresh model whose potential is identically zero: linear weights are
    zero; MLP hidden layers are Glorot-initialized with a zero output layer."""
    dim = FEATURE_DIMS[feature_map]
    if kind == "linear":
        params = np.zeros(dim)
    else:
        params = _mlp.glorot_init(dim, tuple(hidden), seed)
    return PotentialModel(
        feature_map=feature_map,
        kind=kind,
        hidden=tuple(hidden),
        params=params,
        scaler_mean=np.zeros(dim),
        scaler_std=np.ones(dim),
    )


def potential_values(m: PotentialModel, features: np.ndarray) -> np.ndarray:
    """Potential for each feature row; features is (n, dim)."""
    if features.ndim != 2 or features.shape[1] != m.dim:
        raise ValueError(f"features must be (n, {m.dim})")
    if m.kind == "linear":
        return features @ m.params
    z = (features - m.scaler_mean) / m.scaler_std
    out, _ = _mlp.forward(m.params, z, m.dim, m.hidden)
    return out


def potential_value(m: PotentialModel, features: np.ndarray) -> float:
    return float(potential_values(m, features[None, :])[0])


def potential_select(
    donor: DonorRecord,
    pool: Sequence[PatientState],
    m: PotentialModel,
    model: SurvivalModel,
    horizon_days: int = 1,
) -> Decision:
    """Argmax of utility minus potential; the discard gate still checks the
    raw utility of the selected candidate."""
    if not pool:
        return Discard("no_candidates")
    utils = utilities_for(donor, patient_arrays(pool), model)
    features = phi_pool(m.feature_map, donor, pool, t=donor.arrival_time, horizon_days=horizon_days, model=model)
    q = utils - potential_values(m, features)
    i = _argmax_lowest_id(q, pool)
    if utils[i] <= 0.0:
        return Discard("nonpositive_utility")
    return Selected(pool[i].patient_id, float(q[i]))


# --- composite-score policy (patient-side linear ranking) -------------------


@dataclass(frozen=True, eq=False)
class CasWeights:
    weights: np.ndarray  # over the CAS14 feature layout

    def __post_init__(self):
        if self.weights.shape != (FEATURE_DIMS[FeatureMapId.CAS14],):
            raise ValueError(f"weights must have shape ({FEATURE_DIMS[FeatureMapId.CAS14]},)")


def cas_select(donor: DonorRecord, pool: Sequence[PatientState], w: CasWeights, model: SurvivalModel) -> Decision:
    """Rank candidates by a fixed linear score that never sees predicted
    utility; keep the myopic-style discard gate on the selected pair."""
    if not pool:
        return Discard("no_candidates")
    scores = phi_pool(FeatureMapId.CAS14, donor, pool, t=donor.arrival_time) @ w.weights
    i = _argmax_lowest_id(scores, pool)
    if utility(donor, pool[i], model) <= 0.0:
        return Discard("nonpositive_utility")
    return Selected(pool[i].patient_id, float(scores[i]))


# --- tiered lexicographic policy --------------------------------------------

_P = MatchClass.PRIMARY
_S = MatchClass.SECONDARY

# (status, blood match class, distance band in nm; None = any distance),
# scanned in order; a candidate's tier is 1 + the first row it satisfies.
TIER_TABLE: tuple[tuple[int, MatchClass, float | None], ...] = (
    (1, _P, 500.0), (1, _S, 500.0),
    (2, _P, 500.0), (2, _S, 500.0),
    (3, _P, 250.0), (3, _S, 250.0),
    (1, _P, 1000.0), (1, _S, 1000.0),
    (2, _P, 1000.0), (2, _S, 1000.0),
    (4, _P, 250.0), (4, _S, 250.0),
    (3, _P, 500.0), (3, _S, 500.0),
    (5, _P, 250.0), (5, _S, 250.0),
    (3, _P, 1000.0), (3, _S, 1000.0),
    (6, _P, 250.0), (6, _S, 250.0),
    (1, _P, 1500.0), (1, _S, 1500.0),
    (2, _P, 1500.0), (2, _S, 1500.0),
    (3, _P, 1500.0), (3, _S, 1500.0),
    (4, _P, 500.0), (4, _S, 500.0),
    (5, _P, 500.0), (5, _S, 500.0),
    (6, _P, 500.0), (6, _S, 500.0),
    (1, _P, 2500.0), (1, _S, 2500.0),
    (2, _P, 2500.0), (2, _S, 2500.0),
    (3, _P, 2500.0), (3, _S, 2500.0),
    (4, _P, 1000.0), (4, _S, 1000.0),
    (5, _P, 1000.0), (5, _S, 1000.0),
    (6, _P, 1000.0), (6, _S, 1000.0),
    (1, _P, None), (1, _S, None),
    (2, _P, None), (2, _S, None),
    (3, _P, None), (3, _S, None),
    (4, _P, 1500.0), (4, _S, 1500.0),
    (5, _P, 1500.0), (5, _S, 1500.0),
    (6, _P, 1500.0), (6, _S, 1500.0),
    (4, _P, 2500.0), (4, _S, 2500.0),
    (5, _P, 2500.0), (5, _S, 2500.0),
    (6, _P, 2500.0), (6, _S, 2500.0),
    (4, _P, None), (4, _S, None),
    (5, _P, None), (5, _S, None),
    (6, _P, None), (6, _S, None),
)

assert len(TIER_TABLE) == 68


def tier_of(status: int, mclass: MatchClass, distance: float) -> int | None:
    """1-based tier of a candidate, or None for blood-infeasible pairs."""
    if mclass is MatchClass.INFEASIBLE:
        return None
    for row, (row_status, row_class, band) in enumerate(TIER_TABLE):
        if row_status == status and row_class is mclass and (band is None or distance <= band):
            return row + 1
    return None


def status_quo_select(donor: DonorRecord, pool: Sequence[PatientState]) -> Decision:
    """Lowest tier wins; ties go to the earliest listing then the lowest
    patient id. Never discards a feasible offer on utility grounds."""
    if not pool:
        return Discard("no_candidates")
    best: tuple[int, int, str] | None = None
    best_patient: PatientState | None = None
    for p in pool:
        tier = tier_of(p.status, match_class(donor.blood_type, p.blood_type), distance_nm(donor.location, p.location))
        if tier is None:
            continue
        key = (tier, p.listed_time, p.patient_id)
        if best is None or key < best:
            best = key
            best_patient = p
    if best is None:
        return Discard("no_candidates")
    return Selected(best_patient.patient_id, float(-best[0]))


# --- model file formats ------------------------------------------------------

_MODEL_MAGIC = "HEARTMATCH-MODEL"
_CAS_MAGIC = "HEARTMATCH-CAS"
_MODEL_VERSION = 1


def serialize_potential_model(m: PotentialModel) -> str:
    lines = [
        f"{_MODEL_MAGIC} {_MODEL_VERSION}",
        f"kind {m.kind}",
        f"feature_map {m.feature_map.value}",
        "hidden " + (",".join(str(h) for h in m.hidden) if m.hidden else "-"),
        "scaler_mean " + " ".join(fmt_real(v) for v in m.scaler_mean),
        "scaler_std " + " ".join(fmt_real(v) for v in m.scaler_std),
        f"params {m.params.size}",
    ]
    lines.extend(fmt_real(v) for v in m.params)
    return "\n".join(lines) + "\n"


def parse_potential_model(text: str) -> PotentialModel:
    lines = text.splitlines()
    if not lines or lines[0] != f"{_MODEL_MAGIC} {_MODEL_VERSION}":
        raise FormatError("bad potential model header")

    def take(idx: int, key: str) -> str:
        if idx >= len(lines) or not lines[idx].startswith(key + " "):
            raise FormatError(f"expected '{key}' on line {idx + 1}")
        return lines[idx][len(key) + 1 :]

    kind = take(1, "kind")
    try:
        feature_map = FeatureMapId(take(2, "feature_map"))
    except ValueError:
        raise FormatError(f"unknown feature map on line 3") from None
    hidden_tok = take(3, "hidden")
    hidden = () if hidden_tok == "-" else tuple(int(h) for h in hidden_tok.split(","))
    try:
        mean = np.array([float(v) for v in take(4, "scaler_mean").split(" ")])
        std = np.array([float(v) for v in take(5, "scaler_std").split(" ")])
        n = int(take(6, "params"))
        if len(lines) != 7 + n:
            raise FormatError(f"expected {7 + n} lines, found {len(lines)}")
        params = np.array([float(v) for v in lines[7:]])
    except ValueError as exc:
        raise FormatError(str(exc)) from None
    try:
        return PotentialModel(feature_map=feature_map, kind=kind, hidden=hidden, params=params, scaler_mean=mean, scaler_std=std)
    except ValueError as exc:
        raise FormatError(str(exc)) from None


def save_potential_model(m: PotentialModel, path: str) -> None:
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write(serialize_potential_model(m))


def load_potential_model(path: str) -> PotentialModel:
    with open(path, "r", encoding="ascii") as fh:
        return parse_potential_model(fh.read())


def save_cas_weights(w: CasWeights, path: str) -> None:
    lines = [f"{_CAS_MAGIC} {_MODEL_VERSION}", f"weights {w.weights.size}"]
    lines.extend(fmt_real(v) for v in w.weights)
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def load_cas_weights(path: str) -> CasWeights:
    with open(path, "r", encoding="ascii") as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != f"{_CAS_MAGIC} {_MODEL_VERSION}":
        raise FormatError("bad score-weights header")
    try:
        n = int(lines[1].split(" ")[1])
        values = np.array([float(v) for v in lines[2:]])
    except (IndexError, ValueError) as exc:
        raise FormatError(str(exc)) from None
    if values.size != n:
        raise FormatError(f"expected {n} weights, found {values.size}")
    try:
        return CasWeights(weights=values)
    except ValueError as exc:
        raise FormatError(str(exc)) from None


# --- policy objects used by the simulator ------------------------------------


class MyopicPolicy:
    name = "myopic"

    def decide(self, donor, pool, *, cfg, model, horizon_days):
        return myopic_select(donor, pool, model)


class StatusQuoPolicy:
    name = "status_quo"

    def decide(self, donor, pool, *, cfg, model, horizon_days):
        return status_quo_select(donor, pool)


class CasPolicy:
    def __init__(self, weights: CasWeights, name: str = "cas"):
        self.weights = weights
        self.name = name

    def decide(self, donor, pool, *, cfg, model, horizon_days):
        return cas_select(donor, pool, self.weights, model)


class PotentialPolicy:
    def __init__(self, m: PotentialModel, name: str = "potential"):
        self.m = m
        self.name = name

    def decide(self, donor, pool, *, cfg, model, horizon_days):
        return potential_select(donor, pool, self.m, model, horizon_days=horizon_days)
