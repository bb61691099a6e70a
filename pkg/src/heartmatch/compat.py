"""Blood and distance compatibility plus the ground-truth outcome model.

Utility of a (donor, patient) pair is predicted life-years gained:
expected post-transplant survival minus expected waitlist survival, both
log-linear in documented feature sets. Per-pair utility overrides let golden
tests pin exact edge weights without touching the model formula.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Mapping, Sequence

import numpy as np

from .domain import BLOOD_INDEX, NUM_REGIONS, BloodType, DonorRecord, Location, PatientState

# Recipient sets per donor type: O donates to anyone, AB only to AB.
_COMPATIBLE = {
    BloodType.O: frozenset({BloodType.O, BloodType.A, BloodType.B, BloodType.AB}),
    BloodType.A: frozenset({BloodType.A, BloodType.AB}),
    BloodType.B: frozenset({BloodType.B, BloodType.AB}),
    BloodType.AB: frozenset({BloodType.AB}),
}


class MatchClass(Enum):
    PRIMARY = "primary"      # identical blood types
    SECONDARY = "secondary"  # compatible but non-identical
    INFEASIBLE = "infeasible"


def blood_compatible(donor: BloodType, patient: BloodType) -> bool:
    return patient in _COMPATIBLE[donor]


def match_class(donor: BloodType, patient: BloodType) -> MatchClass:
    if not blood_compatible(donor, patient):
        return MatchClass.INFEASIBLE
    return MatchClass.PRIMARY if donor == patient else MatchClass.SECONDARY


def distance_nm(a: Location, b: Location) -> float:
    """Euclidean distance in the nautical-mile plane."""
    return math.hypot(a.x - b.x, a.y - b.y)


def _default_centroids() -> tuple[tuple[float, float], ...]:
    # 3x3 grid, 700 nm spacing; region r owns the Voronoi square of centroid r.
    return tuple((((r - 1) % 3) * 700.0, ((r - 1) // 3) * 700.0) for r in range(1, NUM_REGIONS + 1))


@dataclass(frozen=True)
class CompatConfig:
    max_distance_nm: float = 1000.0
    region_centroids: tuple[tuple[float, float], ...] = field(default_factory=_default_centroids)

    def to_dict(self) -> dict:
        return {
            "max_distance_nm": self.max_distance_nm,
            "region_centroids": [list(c) for c in self.region_centroids],
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "CompatConfig":
        kwargs = {}
        if "max_distance_nm" in data:
            kwargs["max_distance_nm"] = float(data["max_distance_nm"])
        if "region_centroids" in data:
            cents = tuple((float(x), float(y)) for x, y in data["region_centroids"])
            if len(cents) != NUM_REGIONS:
                raise ValueError(f"expected {NUM_REGIONS} region centroids, got {len(cents)}")
            kwargs["region_centroids"] = cents
        return cls(**kwargs)


def consistent_region(loc: Location, cfg: CompatConfig) -> bool:
    """A location is consistent when its region's centroid is the nearest one."""
    d2 = [(loc.x - cx) ** 2 + (loc.y - cy) ** 2 for cx, cy in cfg.region_centroids]
    return int(np.argmin(d2)) + 1 == loc.region


def feasible(donor: DonorRecord, patient: PatientState, cfg: CompatConfig) -> bool:
    return blood_compatible(donor.blood_type, patient.blood_type) and distance_nm(donor.location, patient.location) <= cfg.max_distance_nm


# Feature layouts for the log-linear survival formulas. Positions are part of
# the config-file contract (coefficient vectors are stored in this order).
WAITLIST_FEATURES = ("severity", "cpra", "lvad_years")
TRANSPLANT_FEATURES = ("severity", "cpra", "one_minus_quality", "blood_nonidentical", "quality_x_severity", "distance_per_1000nm")

_DEFAULT_WAITLIST_COEFFS = (1.9, 0.3, 0.15)
_DEFAULT_TRANSPLANT_COEFFS = (1.0, 0.25, 0.8, 0.06, -0.15, 0.08)


@dataclass(frozen=True)
class SurvivalModel:
    """Expected-survival model, strictly worse on the waitlist for sicker
    patients and strictly better post-transplant for higher donor quality."""

    waitlist_base_years: float = 7.5
    waitlist_coeffs: tuple[float, ...] = _DEFAULT_WAITLIST_COEFFS
    transplant_base_years: float = 11.0
    transplant_coeffs: tuple[float, ...] = _DEFAULT_TRANSPLANT_COEFFS
    utility_overrides: Mapping[tuple[str, str], float] = field(default_factory=dict)

    def __post_init__(self):
        if len(self.waitlist_coeffs) != len(WAITLIST_FEATURES):
            raise ValueError(f"waitlist_coeffs must have {len(WAITLIST_FEATURES)} entries")
        if len(self.transplant_coeffs) != len(TRANSPLANT_FEATURES):
            raise ValueError(f"transplant_coeffs must have {len(TRANSPLANT_FEATURES)} entries")
        if self.waitlist_base_years <= 0 or self.transplant_base_years <= 0:
            raise ValueError("base survival must be positive")
        if self.waitlist_coeffs[0] <= 0:
            raise ValueError("waitlist severity coefficient must be positive")
        # d(log survival)/d(quality) = c_one_minus_quality - c_interaction * severity
        if self.transplant_coeffs[2] - max(0.0, self.transplant_coeffs[4]) <= 0:
            raise ValueError("post-transplant survival must increase with donor quality")

    def to_dict(self) -> dict:
        return {
            "waitlist_base_years": self.waitlist_base_years,
            "waitlist_coeffs": list(self.waitlist_coeffs),
            "transplant_base_years": self.transplant_base_years,
            "transplant_coeffs": list(self.transplant_coeffs),
            "utility_overrides": {f"{d} {p}": u for (d, p), u in self.utility_overrides.items()},
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "SurvivalModel":
        kwargs: dict = {}
        for key in ("waitlist_base_years", "transplant_base_years"):
            if key in data:
                kwargs[key] = float(data[key])
        for key in ("waitlist_coeffs", "transplant_coeffs"):
            if key in data:
                kwargs[key] = tuple(float(v) for v in data[key])
        if "utility_overrides" in data:
            overrides = {}
            for joined, u in data["utility_overrides"].items():
                donor_id, patient_id = joined.split(" ")
                overrides[(donor_id, patient_id)] = float(u)
            kwargs["utility_overrides"] = overrides
        return cls(**kwargs)


def waitlist_survival_years(patient: PatientState, model: SurvivalModel) -> float:
    c = model.waitlist_coeffs
    exponent = c[0] * patient.severity + c[1] * patient.cpra + c[2] * (patient.lvad_days / 365.25)
    return model.waitlist_base_years * math.exp(-exponent)


def posttransplant_survival_years(donor: DonorRecord, patient: PatientState, model: SurvivalModel) -> float:
    c = model.transplant_coeffs
    exponent = (
        c[0] * patient.severity
        + c[1] * patient.cpra
        + c[2] * (1.0 - donor.quality)
        + c[3] * (0.0 if donor.blood_type == patient.blood_type else 1.0)
        + c[4] * (donor.quality * patient.severity)
        + c[5] * (distance_nm(donor.location, patient.location) / 1000.0)
    )
    return model.transplant_base_years * math.exp(-exponent)


def utility(donor: DonorRecord, patient: PatientState, model: SurvivalModel) -> float:
    """Predicted life-years gained by transplanting this donor into this patient.

    Routed through the vectorized kernel so scalar and batched computations of
    the same pair are bit-identical (np.exp and math.exp may differ by an ulp).
    """
    override = model.utility_overrides.get((donor.donor_id, patient.patient_id))
    if override is not None:
        return override
    return float(utilities_for(donor, patient_arrays([patient]), model)[0])


@dataclass(frozen=True)
class PatientArrays:
    """Column view of a patient list for vectorized scoring."""

    ids: tuple[str, ...]
    blood_idx: np.ndarray
    x: np.ndarray
    y: np.ndarray
    region: np.ndarray
    severity: np.ndarray
    status: np.ndarray
    cpra: np.ndarray
    lvad_days: np.ndarray
    listed_time: np.ndarray
    as_of_time: np.ndarray


def patient_arrays(patients: Sequence[PatientState]) -> PatientArrays:
    n = len(patients)
    blood = np.empty(n, dtype=np.int64)
    x = np.empty(n)
    y = np.empty(n)
    region = np.empty(n, dtype=np.int64)
    severity = np.empty(n)
    status = np.empty(n, dtype=np.int64)
    cpra = np.empty(n)
    lvad = np.empty(n, dtype=np.int64)
    listed = np.empty(n, dtype=np.int64)
    as_of = np.empty(n, dtype=np.int64)
    for i, p in enumerate(patients):
        blood[i] = BLOOD_INDEX[p.blood_type]
        x[i] = p.location.x
        y[i] = p.location.y
        region[i] = p.location.region
        severity[i] = p.severity
        status[i] = p.status
        cpra[i] = p.cpra
        lvad[i] = p.lvad_days
        listed[i] = p.listed_time
        as_of[i] = p.as_of_time
    return PatientArrays(
        ids=tuple(p.patient_id for p in patients),
        blood_idx=blood, x=x, y=y, region=region, severity=severity,
        status=status, cpra=cpra, lvad_days=lvad, listed_time=listed, as_of_time=as_of,
    )


# Donor-type rows of the compatibility matrix indexed by BLOOD_INDEX order.
_COMPAT_MATRIX = np.array(
    [[1 if blood_compatible(d, p) else 0 for p in BLOOD_INDEX] for d in BLOOD_INDEX],
    dtype=bool,
)


def raw_feasible(donor: DonorRecord, blood_idx: np.ndarray, x: np.ndarray, y: np.ndarray, cfg: CompatConfig) -> np.ndarray:
    ok_blood = _COMPAT_MATRIX[BLOOD_INDEX[donor.blood_type]][blood_idx]
    dist = np.hypot(x - donor.location.x, y - donor.location.y)
    return ok_blood & (dist <= cfg.max_distance_nm)


def raw_utilities(
    donor: DonorRecord,
    blood_idx: np.ndarray,
    x: np.ndarray,
    y: np.ndarray,
    severity: np.ndarray,
    cpra: np.ndarray,
    lvad_days: np.ndarray,
    model: SurvivalModel,
) -> np.ndarray:
    """Survival-formula utilities against parallel patient columns (no overrides)."""
    wc = model.waitlist_coeffs
    waitlist = model.waitlist_base_years * np.exp(
        -(wc[0] * severity + wc[1] * cpra + wc[2] * (lvad_days / 365.25))
    )
    tc = model.transplant_coeffs
    dist = np.hypot(x - donor.location.x, y - donor.location.y)
    nonidentical = (blood_idx != BLOOD_INDEX[donor.blood_type]).astype(float)
    transplant = model.transplant_base_years * np.exp(
        -(
            tc[0] * severity
            + tc[1] * cpra
            + tc[2] * (1.0 - donor.quality)
            + tc[3] * nonidentical
            + tc[4] * (donor.quality * severity)
            + tc[5] * (dist / 1000.0)
        )
    )
    return transplant - waitlist


def apply_overrides(donor: DonorRecord, ids: Sequence[str], out: np.ndarray, model: SurvivalModel) -> np.ndarray:
    if model.utility_overrides:
        for i, pid in enumerate(ids):
            override = model.utility_overrides.get((donor.donor_id, pid))
            if override is not None:
                out[i] = override
    return out


def feasible_mask(donor: DonorRecord, cols: PatientArrays, cfg: CompatConfig) -> np.ndarray:
    return raw_feasible(donor, cols.blood_idx, cols.x, cols.y, cfg)


def utilities_for(donor: DonorRecord, cols: PatientArrays, model: SurvivalModel) -> np.ndarray:
    """Vectorized utility of `donor` against every patient column; applies overrides."""
    out = raw_utilities(donor, cols.blood_idx, cols.x, cols.y, cols.severity, cols.cpra, cols.lvad_days, model)
    return apply_overrides(donor, cols.ids, out, model)


def utilities(donor: DonorRecord, patients: Sequence[PatientState], model: SurvivalModel) -> np.ndarray:
    return utilities_for(donor, patient_arrays(patients), model)
