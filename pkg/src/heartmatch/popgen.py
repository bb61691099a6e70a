"""Synthetic population generation and semi-synthetic resampling.

`generate_trajectory` draws a full arrival/progression/departure history from
a configurable ground-truth process. `semisynthetic` bootstraps short
trajectories from a source history: donor and patient volumes are uniform
between observed window bounds, entities are resampled with replacement, and
each patient's internal progression keeps its offsets from listing, so a
patient who died 12 days after listing still dies 12 days after the new
listing time.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

from .domain import (
    BLOOD_ORDER,
    NUM_REGIONS,
    BloodType,
    DonorArrival,
    DonorRecord,
    Location,
    PatientArrival,
    PatientDeparture,
    PatientState,
    StatusUpdate,
    Trajectory,
    TrajectoryEvent,
    canonicalize,
    status_from_severity,
)

# Coordinates are drawn within +/- this many nm of the region centroid; for
# the default 700 nm centroid grid this keeps every point inside its region's
# Voronoi cell.
REGION_BOX_HALF_NM = 330.0

_DEFAULT_BLOOD_FREQS = (0.44, 0.42, 0.10, 0.04)
_DEFAULT_REGION_WEIGHTS = tuple(1.0 / NUM_REGIONS for _ in range(NUM_REGIONS))


@dataclass(frozen=True)
class PopulationConfig:
    blood_type_frequencies: tuple[float, ...] = _DEFAULT_BLOOD_FREQS  # O, A, B, AB
    region_weights: tuple[float, ...] = _DEFAULT_REGION_WEIGHTS
    region_centroids: tuple[tuple[float, float], ...] | None = None  # default: compat grid
    severity_alpha: float = 2.2
    severity_beta: float = 4.5
    cpra_alpha: float = 0.6
    cpra_beta: float = 2.8
    lvad_probability: float = 0.3
    donor_quality_alpha: float = 5.0
    donor_quality_beta: float = 2.2
    donor_rate_per_day: float = 1.4
    patient_arrival_rate_per_day: float = 2.2
    initial_waitlist_size: int = 160
    max_history_days: int = 365
    death_hazard_scale: float = 1.0
    delisting_fraction: float = 0.1
    status_update_mean_gap_days: float = 21.0
    severity_drift_mean: float = 0.05
    severity_drift_sd: float = 0.08
    rng_seed: int = 0

    def __post_init__(self):
        if len(self.blood_type_frequencies) != len(BLOOD_ORDER):
            raise ValueError("blood_type_frequencies must have 4 entries (O, A, B, AB)")
        if abs(sum(self.blood_type_frequencies) - 1.0) > 1e-9 or min(self.blood_type_frequencies) < 0:
            raise ValueError("blood_type_frequencies must be a probability vector")
        if len(self.region_weights) != NUM_REGIONS:
            raise ValueError(f"region_weights must have {NUM_REGIONS} entries")
        if abs(sum(self.region_weights) - 1.0) > 1e-9 or min(self.region_weights) < 0:
            raise ValueError("region_weights must be a probability vector")
        if self.donor_rate_per_day < 0 or self.patient_arrival_rate_per_day < 0:
            raise ValueError("arrival rates must be non-negative")
        if self.initial_waitlist_size < 0:
            raise ValueError("initial_waitlist_size must be non-negative")
        if not 0.0 <= self.delisting_fraction <= 1.0:
            raise ValueError("delisting_fraction must lie in [0, 1]")
        if not 0.0 <= self.lvad_probability <= 1.0:
            raise ValueError("lvad_probability must lie in [0, 1]")

    def to_dict(self) -> dict:
        data = {
            "blood_type_frequencies": list(self.blood_type_frequencies),
            "region_weights": list(self.region_weights),
            "severity_alpha": self.severity_alpha,
            "severity_beta": self.severity_beta,
            "cpra_alpha": self.cpra_alpha,
            "cpra_beta": self.cpra_beta,
            "lvad_probability": self.lvad_probability,
            "donor_quality_alpha": self.donor_quality_alpha,
            "donor_quality_beta": self.donor_quality_beta,
            "donor_rate_per_day": self.donor_rate_per_day,
            "patient_arrival_rate_per_day": self.patient_arrival_rate_per_day,
            "initial_waitlist_size": self.initial_waitlist_size,
            "max_history_days": self.max_history_days,
            "death_hazard_scale": self.death_hazard_scale,
            "delisting_fraction": self.delisting_fraction,
            "status_update_mean_gap_days": self.status_update_mean_gap_days,
            "severity_drift_mean": self.severity_drift_mean,
            "severity_drift_sd": self.severity_drift_sd,
            "rng_seed": self.rng_seed,
        }
        if self.region_centroids is not None:
            data["region_centroids"] = [list(c) for c in self.region_centroids]
        return data

    @classmethod
    def from_dict(cls, data: Mapping) -> "PopulationConfig":
        kwargs: dict = {}
        tuple_keys = {"blood_type_frequencies", "region_weights"}
        int_keys = {"initial_waitlist_size", "max_history_days", "rng_seed"}
        for key in cls.__dataclass_fields__:
            if key not in data:
                continue
            value = data[key]
            if key == "region_centroids":
                kwargs[key] = tuple((float(x), float(y)) for x, y in value)
            elif key in tuple_keys:
                kwargs[key] = tuple(float(v) for v in value)
            elif key in int_keys:
                kwargs[key] = int(value)
            else:
                kwargs[key] = float(value)
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown population config keys: {sorted(unknown)}")
        return cls(**kwargs)


def _centroids(cfg: PopulationConfig) -> tuple[tuple[float, float], ...]:
    if cfg.region_centroids is not None:
        return cfg.region_centroids
    from .compat import _default_centroids

    return _default_centroids()


@dataclass
class _Progression:
    """Latent per-patient future sampled at listing: status-update offsets and
    an optional departure, all as day offsets from the listing day."""

    updates: list[tuple[int, float, float, int]]  # (offset, severity, cpra, lvad_days)
    departure: tuple[int, str] | None


def _sample_location(rng: np.random.Generator, cfg: PopulationConfig) -> Location:
    region = int(rng.choice(NUM_REGIONS, p=cfg.region_weights)) + 1
    cx, cy = _centroids(cfg)[region - 1]
    x = float(cx + rng.uniform(-REGION_BOX_HALF_NM, REGION_BOX_HALF_NM))
    y = float(cy + rng.uniform(-REGION_BOX_HALF_NM, REGION_BOX_HALF_NM))
    return Location(region=region, x=x, y=y)


def _sample_progression(
    rng: np.random.Generator,
    cfg: PopulationConfig,
    severity0: float,
    cpra: float,
    has_lvad: bool,
    horizon_left: int,
) -> _Progression:
    # Departure offset: exponential clock whose mean shrinks as severity grows.
    mean_days = cfg.death_hazard_scale * 365.25 * max(0.08, 1.15 - severity0)
    dep_offset = 1 + int(rng.exponential(mean_days))
    cause = "delisting" if rng.random() < cfg.delisting_fraction else "death"

    updates: list[tuple[int, float, float, int]] = []
    severity = severity0
    offset = 0
    while True:
        offset += 1 + int(rng.exponential(cfg.status_update_mean_gap_days))
        if offset >= dep_offset or offset > horizon_left:
            break
        severity = float(np.clip(severity + rng.normal(cfg.severity_drift_mean, cfg.severity_drift_sd), 0.0, 1.0))
        lvad_days = offset if has_lvad else 0
        updates.append((offset, severity, cpra, lvad_days))
    departure = (dep_offset, cause) if dep_offset <= horizon_left else None
    return _Progression(updates=updates, departure=departure)


def generate_trajectory(cfg: PopulationConfig, horizon_days: int) -> Trajectory:
    """Sample a complete policy-independent trajectory. Same config and seed
    produce byte-identical output."""
    if horizon_days < 1:
        raise ValueError("horizon_days must be >= 1")
    rng = np.random.default_rng(cfg.rng_seed)
    events: list[TrajectoryEvent] = []
    waitlist: list[PatientState] = []
    patient_counter = 0

    def next_pid() -> str:
        nonlocal patient_counter
        patient_counter += 1
        return f"p{patient_counter:05d}"

    def sample_patient(pid: str, listed_time: int, as_of_time: int, lvad_days: int) -> tuple[PatientState, float, bool]:
        blood = BLOOD_ORDER[int(rng.choice(4, p=cfg.blood_type_frequencies))]
        severity = float(rng.beta(cfg.severity_alpha, cfg.severity_beta))
        cpra = float(rng.beta(cfg.cpra_alpha, cfg.cpra_beta))
        has_lvad = bool(rng.random() < cfg.lvad_probability)
        state = PatientState(
            patient_id=pid,
            blood_type=blood,
            location=_sample_location(rng, cfg),
            severity=severity,
            status=status_from_severity(severity),
            cpra=cpra,
            lvad_days=lvad_days if has_lvad else 0,
            listed_time=listed_time,
            as_of_time=as_of_time,
        )
        return state, cpra, has_lvad

    def emit_progression(pid: str, listed_time: int, anchor_day: int, prog: _Progression) -> None:
        # anchor_day is the day offsets are measured from (listing or day 0).
        for offset, severity, cpra, lvad_days in prog.updates:
            t = anchor_day + offset
            if 1 <= t <= horizon_days:
                events.append(StatusUpdate(time=t, patient_id=pid, severity=severity, status=status_from_severity(severity), cpra=cpra, lvad_days=lvad_days))
        if prog.departure is not None:
            t = anchor_day + prog.departure[0]
            if 1 <= t <= horizon_days:
                events.append(PatientDeparture(time=t, patient_id=pid, cause=prog.departure[1]))

    for _ in range(cfg.initial_waitlist_size):
        listed = -int(rng.integers(1, cfg.max_history_days + 1))
        pid = next_pid()
        state, cpra, has_lvad = sample_patient(pid, listed_time=listed, as_of_time=0, lvad_days=-listed)
        waitlist.append(state)
        # Progression anchored at day 0 (the state snapshot day); lvad offsets
        # are corrected to count from the true listing day.
        prog = _sample_progression(rng, cfg, state.severity, cpra, has_lvad, horizon_days)
        if has_lvad:
            prog.updates = [(off, sev, cp, off - listed) for off, sev, cp, _ in prog.updates]
        emit_progression(pid, listed, anchor_day=0, prog=prog)

    for day in range(1, horizon_days + 1):
        for _ in range(int(rng.poisson(cfg.patient_arrival_rate_per_day))):
            pid = next_pid()
            state, cpra, has_lvad = sample_patient(pid, listed_time=day, as_of_time=day, lvad_days=0)
            events.append(PatientArrival(time=day, patient=state))
            prog = _sample_progression(rng, cfg, state.severity, cpra, has_lvad, horizon_days - day)
            emit_progression(pid, day, anchor_day=day, prog=prog)
        for _ in range(int(rng.poisson(cfg.donor_rate_per_day))):
            donor = DonorRecord(
                donor_id=f"d{day:04d}x{int(rng.integers(0, 10**9)):09d}",
                blood_type=BLOOD_ORDER[int(rng.choice(4, p=cfg.blood_type_frequencies))],
                location=_sample_location(rng, cfg),
                quality=float(rng.beta(cfg.donor_quality_alpha, cfg.donor_quality_beta)),
                arrival_time=day,
            )
            events.append(DonorArrival(time=day, donor=donor))

    return canonicalize(Trajectory(horizon_days=horizon_days, initial_waitlist=tuple(waitlist), events=tuple(events)))


@dataclass(frozen=True)
class ResampleBounds:
    """Min/max donor and patient volumes observed over sliding windows."""

    donor_min: int
    donor_max: int
    patient_min: int
    patient_max: int
    window_days: int
    k_offset_days: int = 7

    def __post_init__(self):
        if not (0 <= self.donor_min <= self.donor_max):
            raise ValueError("donor bounds must satisfy 0 <= min <= max")
        if not (0 <= self.patient_min <= self.patient_max):
            raise ValueError("patient bounds must satisfy 0 <= min <= max")
        if self.window_days < 1 or self.k_offset_days < 0:
            raise ValueError("window_days must be >= 1 and k_offset_days >= 0")

    def to_dict(self) -> dict:
        return {
            "donor_min": self.donor_min,
            "donor_max": self.donor_max,
            "patient_min": self.patient_min,
            "patient_max": self.patient_max,
            "window_days": self.window_days,
            "k_offset_days": self.k_offset_days,
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "ResampleBounds":
        return cls(**{k: int(v) for k, v in data.items()})


def _presence_interval(listed_time: int, depart_day: int | None, horizon: int) -> tuple[int, int]:
    start = max(1, listed_time)
    end = depart_day if depart_day is not None else horizon
    return start, min(end, horizon)


def compute_bounds(trajectory: Trajectory, window_days: int, k_offset_days: int = 7) -> ResampleBounds:
    """Scan every length-`window_days` window of the trajectory and record the
    min/max donor arrivals and min/max unique patients present."""
    horizon = trajectory.horizon_days
    if not 1 <= window_days <= horizon:
        raise ValueError(f"window_days must lie in [1, {horizon}]")
    n_starts = horizon - window_days + 1

    donor_by_day = np.zeros(horizon + 1, dtype=np.int64)
    depart: dict[str, int] = {}
    listed_at: dict[str, int] = {}
    for p in trajectory.initial_waitlist:
        listed_at[p.patient_id] = p.listed_time
    for ev in trajectory.events:
        if isinstance(ev, DonorArrival):
            donor_by_day[ev.time] += 1
        elif isinstance(ev, PatientArrival):
            listed_at[ev.patient.patient_id] = ev.time
        elif isinstance(ev, PatientDeparture):
            depart[ev.patient_id] = ev.time

    csum = np.concatenate(([0], np.cumsum(donor_by_day[1:])))
    donor_counts = csum[window_days:] - csum[:n_starts]

    patient_diff = np.zeros(n_starts + 2, dtype=np.int64)
    for pid, listed in listed_at.items():
        start, end = _presence_interval(listed, depart.get(pid), horizon)
        lo = max(1, start - window_days + 1)
        hi = min(end, n_starts)
        if lo <= hi:
            patient_diff[lo] += 1
            patient_diff[hi + 1] -= 1
    patient_counts = np.cumsum(patient_diff)[1 : n_starts + 1]

    return ResampleBounds(
        donor_min=int(donor_counts.min()),
        donor_max=int(donor_counts.max()),
        patient_min=int(patient_counts.min()),
        patient_max=int(patient_counts.max()),
        window_days=window_days,
        k_offset_days=k_offset_days,
    )


@dataclass(frozen=True)
class _PatientBundle:
    state: PatientState  # snapshot at listing (arrivals) or at day 0 (initial)
    from_initial: bool
    updates: tuple[tuple[int, float, int, float, int], ...]  # offset, severity, status, cpra, lvad
    departure: tuple[int, str] | None


def _extract_bundles(trajectory: Trajectory) -> tuple[list[DonorRecord], list[_PatientBundle]]:
    donors: list[DonorRecord] = []
    anchor: dict[str, int] = {}
    base: dict[str, PatientState] = {}
    updates: dict[str, list] = {}
    departure: dict[str, tuple[int, str]] = {}
    order: list[tuple[str, bool]] = []

    for p in trajectory.initial_waitlist:
        anchor[p.patient_id] = p.listed_time
        base[p.patient_id] = p
        updates[p.patient_id] = []
        order.append((p.patient_id, True))
    for ev in trajectory.events:
        if isinstance(ev, DonorArrival):
            donors.append(ev.donor)
        elif isinstance(ev, PatientArrival):
            anchor[ev.patient.patient_id] = ev.time
            base[ev.patient.patient_id] = ev.patient
            updates[ev.patient.patient_id] = []
            order.append((ev.patient.patient_id, False))
        elif isinstance(ev, StatusUpdate):
            updates[ev.patient_id].append((ev.time - anchor[ev.patient_id], ev.severity, ev.status, ev.cpra, ev.lvad_days))
        elif isinstance(ev, PatientDeparture):
            departure[ev.patient_id] = (ev.time - anchor[ev.patient_id], ev.cause)

    bundles = [
        _PatientBundle(state=base[pid], from_initial=from_initial, updates=tuple(updates[pid]), departure=departure.get(pid))
        for pid, from_initial in order
    ]
    return donors, bundles


def semisynthetic(trajectory: Trajectory, subhorizon_days: int, bounds: ResampleBounds, seed: int) -> Trajectory:
    """Resample a `subhorizon_days`-long trajectory from a source history.

    Donor count ~ U{donor_min..donor_max} with arrivals at U{1..H'};
    patient count ~ U{patient_min..patient_max}. Initial-waitlist patients
    keep their snapshot and shift their listing by U{-k..k}; a shift past
    day 0 turns the patient into a new arrival on that day. New-arrival
    patients relist at U{1..H'}. Progressions keep offsets from listing;
    updates landing before day 1 fold into the day-0 snapshot, and a
    departure that would land before day 1 advances the listing shift just
    enough to keep the departure on day 1 (so volumes stay exact).
    """
    if subhorizon_days <= bounds.k_offset_days:
        raise ValueError("subhorizon_days must exceed k_offset_days")
    donors, bundles = _extract_bundles(trajectory)
    if not donors:
        raise ValueError("source trajectory has no donors to resample")
    if not bundles:
        raise ValueError("source trajectory has no patients to resample")

    rng = np.random.default_rng(seed)
    events: list[TrajectoryEvent] = []
    waitlist: list[PatientState] = []

    n_donors = int(rng.integers(bounds.donor_min, bounds.donor_max + 1))
    for j in range(n_donors):
        src = donors[int(rng.integers(0, len(donors)))]
        day = int(rng.integers(1, subhorizon_days + 1))
        events.append(DonorArrival(time=day, donor=replace(src, donor_id=f"{src.donor_id}~d{j}", arrival_time=day)))

    k = bounds.k_offset_days
    n_patients = int(rng.integers(bounds.patient_min, bounds.patient_max + 1))
    for j in range(n_patients):
        bundle = bundles[int(rng.integers(0, len(bundles)))]
        if bundle.from_initial:
            delta = int(rng.integers(-k, k + 1))
            new_listed = bundle.state.listed_time + delta
        else:
            new_listed = int(rng.integers(1, subhorizon_days + 1))
        if bundle.departure is not None and new_listed + bundle.departure[0] < 1:
            new_listed = 1 - bundle.departure[0]

        pid = f"{bundle.state.patient_id}~p{j}"
        state = replace(bundle.state, patient_id=pid, listed_time=new_listed)
        if new_listed >= 1:
            state = replace(state, as_of_time=new_listed)
            if new_listed <= subhorizon_days:
                events.append(PatientArrival(time=new_listed, patient=state))
            else:
                continue  # unreachable for valid sources; guard keeps output well formed
        else:
            state = replace(state, as_of_time=0)

        folded = state
        for offset, severity, status, cpra, lvad_days in bundle.updates:
            t = new_listed + offset
            if t < 1:
                folded = folded.with_update(severity=severity, cpra=cpra, lvad_days=lvad_days, as_of_time=folded.as_of_time)
            elif t <= subhorizon_days:
                events.append(StatusUpdate(time=t, patient_id=pid, severity=severity, status=status, cpra=cpra, lvad_days=lvad_days))
        if new_listed < 1:
            waitlist.append(folded)
        if bundle.departure is not None:
            t = new_listed + bundle.departure[0]
            if 1 <= t <= subhorizon_days:
                events.append(PatientDeparture(time=t, patient_id=pid, cause=bundle.departure[1]))

    return canonicalize(Trajectory(horizon_days=subhorizon_days, initial_waitlist=tuple(waitlist), events=tuple(events)))
