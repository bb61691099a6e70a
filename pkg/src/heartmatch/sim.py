"""Online replay of a trajectory under an allocation policy, plus metrics.

The simulator walks events in canonical order. On each donor arrival the
policy sees the feasible pool and either selects (the patient leaves the
waitlist immediately; later events for them are suppressed) or discards.
Total lifetime gain is the fsum of matched utilities, so it is reproducible
and order-independent.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Protocol, Sequence

from .compat import CompatConfig, SurvivalModel, utility
from .domain import (
    BLOOD_ORDER,
    DonorArrival,
    MatchRecord,
    PatientArrival,
    PatientDeparture,
    PatientState,
    StatusUpdate,
    Trajectory,
    canonicalize,
    require_valid,
)
from .oracle import upper_bound
from .policies import Decision, Discard, Selected, candidate_pool


class Policy(Protocol):
    name: str

    def decide(self, donor, pool, *, cfg, model, horizon_days) -> Decision: ...


@dataclass(frozen=True)
class LedgerEntry:
    patient_id: str
    start_day: int  # max(0, listed_time); day 0 is the horizon start
    end_day: int
    outcome: str  # matched | death | delisting | horizon_end


@dataclass(frozen=True)
class SimulationResult:
    policy_name: str
    matches: tuple[MatchRecord, ...]
    discards: tuple[tuple[int, str, str], ...]  # (time, donor_id, reason)
    deaths: tuple[tuple[int, str], ...]
    ledger: tuple[LedgerEntry, ...]
    total_plyg: float


def run(trajectory: Trajectory, policy: Policy, cfg: CompatConfig, model: SurvivalModel, validate: bool = True) -> SimulationResult:
    """Simulate one trajectory under `policy`. Deterministic: same inputs give
    the identical result object."""
    if validate:
        require_valid(trajectory)
    t = canonicalize(trajectory)
    horizon = t.horizon_days

    waitlist: dict[str, PatientState] = {}
    start_day: dict[str, int] = {}
    matches: list[MatchRecord] = []
    discards: list[tuple[int, str, str]] = []
    deaths: list[tuple[int, str]] = []
    ledger: list[LedgerEntry] = []

    for p in t.initial_waitlist:
        waitlist[p.patient_id] = p
        start_day[p.patient_id] = max(0, p.listed_time)

    for ev in t.events:
        if isinstance(ev, PatientArrival):
            waitlist[ev.patient.patient_id] = ev.patient
            start_day[ev.patient.patient_id] = max(0, ev.time)
        elif isinstance(ev, StatusUpdate):
            state = waitlist.get(ev.patient_id)
            if state is not None:
                waitlist[ev.patient_id] = state.with_update(
                    severity=ev.severity, cpra=ev.cpra, lvad_days=ev.lvad_days, as_of_time=ev.time
                )
        elif isinstance(ev, PatientDeparture):
            if ev.patient_id in waitlist:
                del waitlist[ev.patient_id]
                if ev.cause == "death":
                    deaths.append((ev.time, ev.patient_id))
                ledger.append(LedgerEntry(ev.patient_id, start_day[ev.patient_id], ev.time, ev.cause))
        elif isinstance(ev, DonorArrival):
            donor = ev.donor
            pool = candidate_pool(donor, list(waitlist.values()), cfg)
            decision = policy.decide(donor, pool, cfg=cfg, model=model, horizon_days=horizon)
            if isinstance(decision, Selected):
                state = waitlist.pop(decision.patient_id)
                matches.append(MatchRecord(time=ev.time, donor_id=donor.donor_id, patient_id=state.patient_id, utility=utility(donor, state, model)))
                ledger.append(LedgerEntry(state.patient_id, start_day[state.patient_id], ev.time, "matched"))
            else:
                discards.append((ev.time, donor.donor_id, decision.reason))

    for pid in waitlist:
        ledger.append(LedgerEntry(pid, start_day[pid], horizon, "horizon_end"))

    return SimulationResult(
        policy_name=policy.name,
        matches=tuple(matches),
        discards=tuple(discards),
        deaths=tuple(deaths),
        ledger=tuple(sorted(ledger, key=lambda e: (e.end_day, e.patient_id))),
        total_plyg=math.fsum(m.utility for m in matches),
    )


# --- outcome metrics ---------------------------------------------------------

METRIC_GROUPS = tuple(b.value for b in BLOOD_ORDER) + ("all",)


@dataclass(frozen=True)
class GroupMetrics:
    group: str
    patients: int
    transplants: int
    deaths: int
    wait_years: float
    transplant_per_patient: float | None
    transplant_per_wait_year: float | None
    mortality_per_patient: float | None
    mortality_per_wait_year: float | None


def _rate(num: int, denom: float) -> float | None:
    return None if denom == 0 else num / denom


def metrics(result: SimulationResult, trajectory: Trajectory) -> tuple[GroupMetrics, ...]:
    """Per-blood-group and aggregate transplant/mortality rates. Wait years
    count in-horizon days from listing until match, departure, or horizon end."""
    t = canonicalize(trajectory)
    blood_of: dict[str, str] = {p.patient_id: p.blood_type.value for p in t.initial_waitlist}
    for ev in t.events:
        if isinstance(ev, PatientArrival):
            blood_of[ev.patient.patient_id] = ev.patient.blood_type.value

    counts = {g: {"patients": 0, "transplants": 0, "deaths": 0, "wait_days": 0} for g in METRIC_GROUPS}
    for pid, group in blood_of.items():
        for g in (group, "all"):
            counts[g]["patients"] += 1
    for m in result.matches:
        for g in (blood_of[m.patient_id], "all"):
            counts[g]["transplants"] += 1
    for _, pid in result.deaths:
        for g in (blood_of[pid], "all"):
            counts[g]["deaths"] += 1
    for entry in result.ledger:
        for g in (blood_of[entry.patient_id], "all"):
            counts[g]["wait_days"] += entry.end_day - entry.start_day

    out = []
    for g in METRIC_GROUPS:
        c = counts[g]
        wait_years = c["wait_days"] / 365.25
        out.append(
            GroupMetrics(
                group=g,
                patients=c["patients"],
                transplants=c["transplants"],
                deaths=c["deaths"],
                wait_years=wait_years,
                transplant_per_patient=_rate(c["transplants"], c["patients"]),
                transplant_per_wait_year=_rate(c["transplants"], wait_years),
                mortality_per_patient=_rate(c["deaths"], c["patients"]),
                mortality_per_wait_year=_rate(c["deaths"], wait_years),
            )
        )
    return tuple(out)


# --- multi-month reporting ----------------------------------------------------


@dataclass(frozen=True)
class ReportRow:
    month: str  # "1", "2", ... or "mean"
    policy: str
    plyg: float
    upper_bound: float
    competitive_ratio: float | None


def monthly_report(
    trajectories: Sequence[Trajectory],
    policies: Sequence[Policy],
    cfg: CompatConfig,
    model: SurvivalModel,
) -> tuple[ReportRow, ...]:
    """One row per (month, policy) plus a mean row per policy; the ratio
    column is policy total over the hindsight-optimal bound."""
    bounds = [upper_bound(t, cfg, model) for t in trajectories]
    rows: list[ReportRow] = []
    for policy in policies:
        totals = []
        for month, (t, ub) in enumerate(zip(trajectories, bounds), start=1):
            res = run(t, policy, cfg, model, validate=False)
            totals.append(res.total_plyg)
            rows.append(ReportRow(str(month), policy.name, res.total_plyg, ub, None if ub == 0 else res.total_plyg / ub))
        mean_plyg = math.fsum(totals) / len(totals) if totals else 0.0
        mean_ub = math.fsum(bounds) / len(bounds) if bounds else 0.0
        rows.append(ReportRow("mean", policy.name, mean_plyg, mean_ub, None if mean_ub == 0 else mean_plyg / mean_ub))
    return tuple(rows)
