"""Hindsight-optimal matching: static graph construction and an exact solver.

With full knowledge of a trajectory, offline allocation reduces to a maximum
weight bipartite matching: donors on one side, every patient state they could
feasibly receive an offer from on the other, edge weight equal to the utility
at the donor's arrival. The solver is a dense successive-shortest-augmenting-
path (Jonker-Volgenant style) assignment on negated weights with one zero-cost
dummy column per donor, so leaving a donor unallocated is always an option and
strictly negative edges can be dropped up front without losing optimality.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .compat import BLOOD_INDEX, CompatConfig, SurvivalModel, raw_feasible, raw_utilities
from .domain import (
    DonorArrival,
    MatchRecord,
    PatientArrival,
    PatientDeparture,
    StatusUpdate,
    Trajectory,
    canonicalize,
)


@dataclass(frozen=True)
class BipartiteInstance:
    donor_ids: tuple[str, ...]
    donor_times: tuple[int, ...]
    patient_ids: tuple[str, ...]
    edges: tuple[tuple[int, int, float], ...]  # (donor index, patient index, utility)


@dataclass(frozen=True)
class OptimalAllocation:
    matches: tuple[MatchRecord, ...]
    total_utility: float


def build_instance(trajectory: Trajectory, cfg: CompatConfig, model: SurvivalModel) -> BipartiteInstance:
    """Replay the trajectory and emit one edge per feasible (donor, patient)
    pair, weighted by utility at the donor's arrival day. Same-day ordering
    follows the event tie-break, so a donor sees that day's arrivals and
    status changes but not that day's departures."""
    t = canonicalize(trajectory)
    n_patients = len(t.initial_waitlist) + sum(1 for ev in t.events if isinstance(ev, PatientArrival))

    ids: list[str] = []
    index_of: dict[str, int] = {}
    blood = np.zeros(n_patients, dtype=np.int64)
    x = np.zeros(n_patients)
    y = np.zeros(n_patients)
    severity = np.zeros(n_patients)
    cpra = np.zeros(n_patients)
    lvad = np.zeros(n_patients, dtype=np.int64)
    active = np.zeros(n_patients, dtype=bool)

    def add_patient(p) -> None:
        idx = len(ids)
        index_of[p.patient_id] = idx
        ids.append(p.patient_id)
        blood[idx] = BLOOD_INDEX[p.blood_type]
        x[idx] = p.location.x
        y[idx] = p.location.y
        severity[idx] = p.severity
        cpra[idx] = p.cpra
        lvad[idx] = p.lvad_days
        active[idx] = True

    for p in t.initial_waitlist:
        add_patient(p)

    donor_ids: list[str] = []
    donor_times: list[int] = []
    edges: list[tuple[int, int, float]] = []
    has_overrides = bool(model.utility_overrides)

    for ev in t.events:
        if isinstance(ev, PatientArrival):
            add_patient(ev.patient)
        elif isinstance(ev, StatusUpdate):
            idx = index_of[ev.patient_id]
            severity[idx] = ev.severity
            cpra[idx] = ev.cpra
            lvad[idx] = ev.lvad_days
        elif isinstance(ev, PatientDeparture):
            active[index_of[ev.patient_id]] = False
        elif isinstance(ev, DonorArrival):
            d = ev.donor
            di = len(donor_ids)
            donor_ids.append(d.donor_id)
            donor_times.append(ev.time)
            pool = np.flatnonzero(active)
            if pool.size == 0:
                continue
            mask = raw_feasible(d, blood[pool], x[pool], y[pool], cfg)
            cand = pool[mask]
            if cand.size == 0:
                continue
            utils = raw_utilities(d, blood[cand], x[cand], y[cand], severity[cand], cpra[cand], lvad[cand], model)
            if has_overrides:
                for k, gi in enumerate(cand):
                    override = model.utility_overrides.get((d.donor_id, ids[gi]))
                    if override is not None:
                        utils[k] = override
            for k in range(cand.size):
                edges.append((di, int(cand[k]), float(utils[k])))

    return BipartiteInstance(
        donor_ids=tuple(donor_ids),
        donor_times=tuple(donor_times),
        patient_ids=tuple(ids),
        edges=tuple(edges),
    )


def _lapjv_min(cost: np.ndarray) -> np.ndarray:
    """Exact min-cost row-complete assignment via shortest augmenting paths.

    `cost` is (n, m) with n <= m; np.inf marks forbidden pairs. Every row must
    reach some column with finite cost (callers append dummy columns to make
    this unconditional). Returns row -> column indices.
    """
    n, m = cost.shape
    u = np.zeros(n)
    v = np.zeros(m)
    col_to_row = np.full(m, -1, dtype=np.int64)
    for i in range(n):
        minv = np.full(m, np.inf)
        way = np.full(m, -1, dtype=np.int64)  # predecessor column on the alternating path
        used = np.zeros(m, dtype=bool)
        i0 = i
        j0 = -1
        while True:
            cur = cost[i0] - u[i0] - v
            improve = ~used & (cur < minv)
            minv[improve] = cur[improve]
            way[improve] = j0
            d = np.where(used, np.inf, minv)
            j1 = int(np.argmin(d))
            delta = d[j1]
            if not np.isfinite(delta):
                raise RuntimeError("assignment infeasible; dummy columns missing")
            u[i] += delta
            if used.any():
                u[col_to_row[used]] += delta
                v[used] -= delta
            minv[~used] -= delta
            used[j1] = True
            if col_to_row[j1] < 0:
                j0 = j1
                break
            i0 = col_to_row[j1]
            j0 = j1
        while j0 >= 0:
            j_prev = way[j0]
            col_to_row[j0] = i if j_prev < 0 else col_to_row[j_prev]
            j0 = j_prev

    row_to_col = np.full(n, -1, dtype=np.int64)
    for j in range(m):
        if col_to_row[j] >= 0:
            row_to_col[col_to_row[j]] = j
    return row_to_col


def solve(instance: BipartiteInstance) -> OptimalAllocation:
    """Maximum-weight matching with discards allowed.

    Strictly negative edges are dropped first (a discard dominates them), the
    remaining weights are negated, and each donor gets a private zero-cost
    dummy column. Totals use math.fsum so equal matchings sum identically
    regardless of edge order.
    """
    n = len(instance.donor_ids)
    m = len(instance.patient_ids)
    weight_of: dict[tuple[int, int], float] = {}
    for di, pi, w in instance.edges:
        if not 0 <= di < n or not 0 <= pi < m:
            raise ValueError(f"edge ({di}, {pi}) references invalid indices")
        if (di, pi) in weight_of:
            raise ValueError(f"duplicate edge ({di}, {pi})")
        weight_of[(di, pi)] = w

    if n == 0:
        return OptimalAllocation(matches=(), total_utility=0.0)

    cost = np.full((n, m + n), np.inf)
    cost[:, m:] = 0.0
    for (di, pi), w in weight_of.items():
        if w >= 0.0:
            cost[di, pi] = -w

    row_to_col = _lapjv_min(cost)
    matches = []
    for di in range(n):
        pi = int(row_to_col[di])
        if pi < m:
            matches.append(
                MatchRecord(
                    time=instance.donor_times[di],
                    donor_id=instance.donor_ids[di],
                    patient_id=instance.patient_ids[pi],
                    utility=weight_of[(di, pi)],
                )
            )
    total = math.fsum(rec.utility for rec in matches)
    return OptimalAllocation(matches=tuple(matches), total_utility=total)


def upper_bound(trajectory: Trajectory, cfg: CompatConfig, model: SurvivalModel) -> float:
    """Hindsight-optimal total utility; no online policy can exceed it."""
    return solve(build_instance(trajectory, cfg, model)).total_utility
