import math
import random
from fractions import Fraction

import pytest

from conftest import make_donor, make_patient
from heartmatch.compat import CompatConfig, SurvivalModel, utility
from heartmatch.domain import (
    BloodType,
    DonorArrival,
    PatientDeparture,
    StatusUpdate,
    Trajectory,
)
from heartmatch.oracle import BipartiteInstance, build_instance, solve, upper_bound

_SCALE_BITS = 1080  # doubles have exponents >= -1074, so this scaling is exact


def _exact_int(w: float) -> int:
    f = Fraction(w)
    return (f.numerator << _SCALE_BITS) // f.denominator


def brute_force_best(n_donors: int, n_patients: int, edges) -> float:
    """Enumerate matchings donor by donor over patient bitmasks, comparing
    totals in exact integer arithmetic; returns fsum of the best edge set."""
    adj = [[] for _ in range(n_donors)]
    for di, pi, w in edges:
        adj[di].append((pi, w, _exact_int(w)))
    states = {0: (0, ())}
    for di in range(n_donors):
        new = {}
        for mask, (tot, sel) in states.items():
            cur = new.get(mask)
            if cur is None or tot > cur[0]:
                new[mask] = (tot, sel)
            for pi, w, iw in adj[di]:
                bit = 1 << pi
                if mask & bit:
                    continue
                cand = (tot + iw, sel + (w,))
                cur = new.get(mask | bit)
                if cur is None or cand[0] > cur[0]:
                    new[mask | bit] = cand
        states = new
    best = max(states.values(), key=lambda pair: pair[0])
    return math.fsum(best[1])


def _random_instance(rng: random.Random) -> BipartiteInstance:
    n = rng.randrange(0, 9)
    m = rng.randrange(0, 9)
    edges = []
    for di in range(n):
        for pi in range(m):
            if rng.random() < 0.55:
                edges.append((di, pi, rng.uniform(-2.0, 10.0)))
    return BipartiteInstance(
        donor_ids=tuple(f"d{i}" for i in range(n)),
        donor_times=tuple(range(1, n + 1)),
        patient_ids=tuple(f"p{j}" for j in range(m)),
        edges=tuple(edges),
    )


def test_solver_matches_brute_force():
    rng = random.Random(2024)
    for _ in range(200):
        inst = _random_instance(rng)
        got = solve(inst).total_utility
        want = brute_force_best(len(inst.donor_ids), len(inst.patient_ids), inst.edges)
        assert got == want  # exact binary64 equality


def test_solve_empty():
    inst = BipartiteInstance(donor_ids=(), donor_times=(), patient_ids=(), edges=())
    alloc = solve(inst)
    assert alloc.matches == () and alloc.total_utility == 0.0


def test_solve_single_edge():
    inst = BipartiteInstance(("d0",), (3,), ("p0",), ((0, 0, 4.25),))
    alloc = solve(inst)
    assert alloc.total_utility == 4.25
    (m,) = alloc.matches
    assert (m.time, m.donor_id, m.patient_id, m.utility) == (3, "d0", "p0", 4.25)


def test_solve_drops_negative_edges():
    inst = BipartiteInstance(("d0", "d1"), (1, 2), ("p0",), ((0, 0, -1.0), (1, 0, 2.0)))
    alloc = solve(inst)
    assert alloc.total_utility == 2.0
    assert [m.donor_id for m in alloc.matches] == ["d1"]


def test_solve_prefers_cross_assignment():
    # greedy would take the 10 edge and strand the second donor
    edges = ((0, 0, 10.0), (0, 1, 9.0), (1, 0, 10.0))
    inst = BipartiteInstance(("d0", "d1"), (1, 2), ("p0", "p1"), edges)
    alloc = solve(inst)
    assert alloc.total_utility == 19.0
    assert {(m.donor_id, m.patient_id) for m in alloc.matches} == {("d0", "p1"), ("d1", "p0")}


def test_instance_validation():
    with pytest.raises(ValueError):
        solve(BipartiteInstance(("d0",), (1,), ("p0",), ((0, 5, 1.0),)))
    with pytest.raises(ValueError):
        solve(BipartiteInstance(("d0",), (1,), ("p0",), ((0, 0, 1.0), (0, 0, 2.0))))


def test_build_instance_replays_state(two_patient_trajectory):
    cfg = CompatConfig()
    model = SurvivalModel()
    inst = build_instance(two_patient_trajectory, cfg, model)
    assert inst.donor_ids == ("d1", "d2")
    assert inst.donor_times == (1, 2)
    # d1 is O: both patients reachable; d2 is A: only the AB patient
    pairs = {(inst.donor_ids[di], inst.patient_ids[pi]) for di, pi, _ in inst.edges}
    assert pairs == {("d1", "p1"), ("d1", "p2"), ("d2", "p1")}


def test_build_instance_respects_updates_and_departures():
    cfg = CompatConfig()
    model = SurvivalModel()
    p1 = make_patient("p1", BloodType.O, severity=0.4)
    p2 = make_patient("p2", BloodType.O, severity=0.4)
    events = (
        StatusUpdate(time=1, patient_id="p1", severity=0.9, status=2, cpra=0.2, lvad_days=0),
        PatientDeparture(time=2, patient_id="p2", cause="death"),
        DonorArrival(time=3, donor=make_donor("d1", BloodType.O, time=3)),
    )
    t = Trajectory(horizon_days=4, initial_waitlist=(p1, p2), events=events)
    inst = build_instance(t, cfg, model)
    assert [inst.patient_ids[pi] for _, pi, _ in inst.edges] == ["p1"]
    # edge weight reflects the post-update state, bit-identically
    updated = p1.with_update(severity=0.9, cpra=0.2, lvad_days=0, as_of_time=1)
    donor = events[2].donor
    (edge,) = inst.edges
    assert edge[2] == utility(donor, updated, model)


def test_upper_bound_equals_solve_total(two_patient_trajectory):
    cfg = CompatConfig()
    model = SurvivalModel()
    assert upper_bound(two_patient_trajectory, cfg, model) == solve(
        build_instance(two_patient_trajectory, cfg, model)
    ).total_utility
