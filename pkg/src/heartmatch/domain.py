"""Core entity types, trajectory container, validation, and file format.

Time is an integer day grid. Events carry times in [1, horizon_days]; the
initial waitlist describes patients already listed when the horizon opens
(listed_time <= 0, state as of day 0). Same-day events are ordered
PatientArrival < StatusUpdate < DonorArrival < PatientDeparture so a donor
sees that day's arrivals and status changes but not that day's departures.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, replace
from typing import Union

NUM_REGIONS = 9
REGION_IDS = tuple(range(1, NUM_REGIONS + 1))

# Severity buckets mapping onto urgency statuses 1 (sickest) .. 6 (least sick).
STATUS_THRESHOLDS = (0.95, 0.85, 0.7, 0.5, 0.25)

_FORMAT_MAGIC = "HEARTMATCH-TRAJ"
_FORMAT_VERSION = 1

DEPARTURE_CAUSES = ("death", "delisting")


class BloodType(enum.Enum):
    O = "O"
    A = "A"
    B = "B"
    AB = "AB"


# Canonical ordering used by every one-hot encoding and report grouping.
BLOOD_ORDER = (BloodType.O, BloodType.A, BloodType.B, BloodType.AB)
BLOOD_INDEX = {b: i for i, b in enumerate(BLOOD_ORDER)}


class FormatError(ValueError):
    """Raised when a trajectory or model file cannot be parsed."""


class TrajectoryValidationError(ValueError):
    """Raised when a trajectory violates structural invariants."""

    def __init__(self, violations: list[str]):
        super().__init__("; ".join(violations[:5]) + ("" if len(violations) <= 5 else f" (+{len(violations) - 5} more)"))
        self.violations = violations


def status_from_severity(severity: float) -> int:
    """Map severity in [0, 1] to urgency status 1..6 (1 = sickest). Buckets
    are open below: a severity exactly at a threshold takes the milder status."""
    for i, threshold in enumerate(STATUS_THRESHOLDS):
        if severity > threshold:
            return i + 1
    return 6


@dataclass(frozen=True, slots=True)
class Location:
    region: int
    x: float
    y: float


@dataclass(frozen=True, slots=True)
class DonorRecord:
    donor_id: str
    blood_type: BloodType
    location: Location
    quality: float
    arrival_time: int


@dataclass(frozen=True, slots=True)
class PatientState:
    """Snapshot of a waitlisted patient as of `as_of_time`.

    `listed_time` may be <= 0 for patients listed before the horizon opened;
    `status` must always equal status_from_severity(severity).
    """

    patient_id: str
    blood_type: BloodType
    location: Location
    severity: float
    status: int
    cpra: float
    lvad_days: int
    listed_time: int
    as_of_time: int

    def with_update(self, severity: float, cpra: float, lvad_days: int, as_of_time: int) -> "PatientState":
        return replace(
            self,
            severity=severity,
            status=status_from_severity(severity),
            cpra=cpra,
            lvad_days=lvad_days,
            as_of_time=as_of_time,
        )

    def wait_days(self) -> int:
        return self.as_of_time - self.listed_time


@dataclass(frozen=True, slots=True)
class PatientArrival:
    time: int
    patient: PatientState


@dataclass(frozen=True, slots=True)
class StatusUpdate:
    time: int
    patient_id: str
    severity: float
    status: int
    cpra: float
    lvad_days: int


@dataclass(frozen=True, slots=True)
class DonorArrival:
    time: int
    donor: DonorRecord


@dataclass(frozen=True, slots=True)
class PatientDeparture:
    time: int
    patient_id: str
    cause: str


TrajectoryEvent = Union[PatientArrival, StatusUpdate, DonorArrival, PatientDeparture]

# Same-day tie-break ranks; together with entity id this induces a total order.
_EVENT_RANK = {PatientArrival: 0, StatusUpdate: 1, DonorArrival: 2, PatientDeparture: 3}


def event_entity_id(event: TrajectoryEvent) -> str:
    if isinstance(event, PatientArrival):
        return event.patient.patient_id
    if isinstance(event, DonorArrival):
        return event.donor.donor_id
    return event.patient_id


def event_order_key(event: TrajectoryEvent) -> tuple[int, int, str]:
    return (event.time, _EVENT_RANK[type(event)], event_entity_id(event))


@dataclass(frozen=True, slots=True)
class MatchRecord:
    time: int
    donor_id: str
    patient_id: str
    utility: float


@dataclass(frozen=True, slots=True)
class Trajectory:
    horizon_days: int
    initial_waitlist: tuple[PatientState, ...]
    events: tuple[TrajectoryEvent, ...]


def canonicalize(trajectory: Trajectory) -> Trajectory:
    """Sort the waitlist by patient id and events by (time, kind, entity id)."""
    return Trajectory(
        horizon_days=trajectory.horizon_days,
        initial_waitlist=tuple(sorted(trajectory.initial_waitlist, key=lambda p: p.patient_id)),
        events=tuple(sorted(trajectory.events, key=event_order_key)),
    )


def _check_id(kind: str, ident: str, where: str, out: list[str]) -> None:
    if not ident or any(c.isspace() for c in ident):
        out.append(f"{where}: {kind} id {ident!r} is empty or contains whitespace")


def _check_patient_fields(p: PatientState, where: str, out: list[str]) -> None:
    _check_id("patient", p.patient_id, where, out)
    if not 0.0 <= p.severity <= 1.0:
        out.append(f"{where}: severity {p.severity} outside [0, 1]")
    if not 0.0 <= p.cpra <= 1.0:
        out.append(f"{where}: cpra {p.cpra} outside [0, 1]")
    if p.status != status_from_severity(p.severity):
        out.append(f"{where}: status {p.status} inconsistent with severity {p.severity}")
    if p.lvad_days < 0:
        out.append(f"{where}: lvad_days {p.lvad_days} negative")
    if p.location.region not in REGION_IDS:
        out.append(f"{where}: region {p.location.region} outside 1..{NUM_REGIONS}")
    if p.as_of_time < p.listed_time:
        out.append(f"{where}: as_of_time {p.as_of_time} precedes listed_time {p.listed_time}")


def validate_trajectory(trajectory: Trajectory) -> list[str]:
    """Return a list of human-readable invariant violations (empty when valid).

    Each entry names the offending element (waitlist slot or event index) and
    the rule it breaks. Validation never raises; callers that need a hard stop
    wrap the result in TrajectoryValidationError.
    """
    out: list[str] = []
    if trajectory.horizon_days < 1:
        out.append(f"horizon_days {trajectory.horizon_days} < 1")

    listed: set[str] = set()
    departed: set[str] = set()
    for i, p in enumerate(trajectory.initial_waitlist):
        where = f"waitlist[{i}]"
        _check_patient_fields(p, where, out)
        if p.patient_id in listed:
            out.append(f"{where}: duplicate patient id {p.patient_id!r}")
        if p.listed_time > 0:
            out.append(f"{where}: initial patient listed_time {p.listed_time} > 0")
        if p.as_of_time != 0:
            out.append(f"{where}: initial patient as_of_time {p.as_of_time} != 0")
        listed.add(p.patient_id)

    seen_patient_ids = set(listed)
    donor_ids: set[str] = set()
    prev_key: tuple[int, int] | None = None
    for i, ev in enumerate(trajectory.events):
        where = f"event[{i}]"
        key = (ev.time, _EVENT_RANK[type(ev)])
        if prev_key is not None and key < prev_key:
            out.append(f"{where}: out of order; (time, kind) {key} precedes previous {prev_key}")
        prev_key = key
        if not 1 <= ev.time <= trajectory.horizon_days:
            out.append(f"{where}: time {ev.time} outside [1, {trajectory.horizon_days}]")

        if isinstance(ev, PatientArrival):
            p = ev.patient
            _check_patient_fields(p, where, out)
            if p.patient_id in seen_patient_ids:
                out.append(f"{where}: patient id {p.patient_id!r} already used")
            if p.listed_time != ev.time or p.as_of_time != ev.time:
                out.append(f"{where}: arrival state times ({p.listed_time}, {p.as_of_time}) != event time {ev.time}")
            seen_patient_ids.add(p.patient_id)
            listed.add(p.patient_id)
        elif isinstance(ev, StatusUpdate):
            if ev.patient_id not in listed:
                out.append(f"{where}: status update for unlisted patient {ev.patient_id!r}")
            if not 0.0 <= ev.severity <= 1.0:
                out.append(f"{where}: severity {ev.severity} outside [0, 1]")
            if not 0.0 <= ev.cpra <= 1.0:
                out.append(f"{where}: cpra {ev.cpra} outside [0, 1]")
            if ev.status != status_from_severity(ev.severity):
                out.append(f"{where}: status {ev.status} inconsistent with severity {ev.severity}")
            if ev.lvad_days < 0:
                out.append(f"{where}: lvad_days {ev.lvad_days} negative")
        elif isinstance(ev, DonorArrival):
            d = ev.donor
            _check_id("donor", d.donor_id, where, out)
            if d.donor_id in donor_ids:
                out.append(f"{where}: duplicate donor id {d.donor_id!r}")
            donor_ids.add(d.donor_id)
            if not 0.0 <= d.quality <= 1.0:
                out.append(f"{where}: quality {d.quality} outside [0, 1]")
            if d.location.region not in REGION_IDS:
                out.append(f"{where}: region {d.location.region} outside 1..{NUM_REGIONS}")
            if d.arrival_time != ev.time:
                out.append(f"{where}: donor arrival_time {d.arrival_time} != event time {ev.time}")
        elif isinstance(ev, PatientDeparture):
            if ev.patient_id not in listed:
                out.append(f"{where}: departure of unlisted patient {ev.patient_id!r}")
            if ev.cause not in DEPARTURE_CAUSES:
                out.append(f"{where}: unknown departure cause {ev.cause!r}")
            listed.discard(ev.patient_id)
            departed.add(ev.patient_id)
    return out


def require_valid(trajectory: Trajectory) -> None:
    violations = validate_trajectory(trajectory)
    if violations:
        raise TrajectoryValidationError(violations)


# --- line-delimited file format, version 1 ---------------------------------
#
# Reals are written with 17 significant digits so parse/serialize round-trips
# are exact for binary64 values.


def fmt_real(x: float) -> str:
    return f"{float(x):.17g}"


def _patient_fields(p: PatientState) -> list[str]:
    return [
        p.patient_id,
        p.blood_type.value,
        str(p.location.region),
        fmt_real(p.location.x),
        fmt_real(p.location.y),
        fmt_real(p.severity),
        str(p.status),
        fmt_real(p.cpra),
        str(p.lvad_days),
    ]


def serialize_trajectory(trajectory: Trajectory) -> str:
    t = canonicalize(trajectory)
    lines = [f"{_FORMAT_MAGIC} {_FORMAT_VERSION} {t.horizon_days} {len(t.initial_waitlist)} {len(t.events)}"]
    for p in t.initial_waitlist:
        lines.append(" ".join(["P", *_patient_fields(p), str(p.listed_time)]))
    for ev in t.events:
        if isinstance(ev, PatientArrival):
            lines.append(" ".join(["PA", str(ev.time), *_patient_fields(ev.patient)]))
        elif isinstance(ev, StatusUpdate):
            lines.append(
                " ".join(
                    ["SU", str(ev.time), ev.patient_id, fmt_real(ev.severity), str(ev.status), fmt_real(ev.cpra), str(ev.lvad_days)]
                )
            )
        elif isinstance(ev, DonorArrival):
            d = ev.donor
            lines.append(
                " ".join(
                    ["DA", str(ev.time), d.donor_id, d.blood_type.value, str(d.location.region), fmt_real(d.location.x), fmt_real(d.location.y), fmt_real(d.quality)]
                )
            )
        else:
            lines.append(" ".join(["PD", str(ev.time), ev.patient_id, ev.cause]))
    return "\n".join(lines) + "\n"


def _parse_blood(token: str, where: str) -> BloodType:
    try:
        return BloodType(token)
    except ValueError:
        raise FormatError(f"{where}: unknown blood type {token!r}") from None


def _parse_patient(fields: list[str], where: str, listed_time: int, as_of_time: int) -> PatientState:
    if len(fields) != 9:
        raise FormatError(f"{where}: expected 9 patient fields, got {len(fields)}")
    try:
        return PatientState(
            patient_id=fields[0],
            blood_type=_parse_blood(fields[1], where),
            location=Location(region=int(fields[2]), x=float(fields[3]), y=float(fields[4])),
            severity=float(fields[5]),
            status=int(fields[6]),
            cpra=float(fields[7]),
            lvad_days=int(fields[8]),
            listed_time=listed_time,
            as_of_time=as_of_time,
        )
    except ValueError as exc:
        raise FormatError(f"{where}: {exc}") from None


def parse_trajectory(text: str) -> Trajectory:
    lines = text.splitlines()
    if not lines:
        raise FormatError("empty trajectory file")
    header = lines[0].split(" ")
    if len(header) != 5 or header[0] != _FORMAT_MAGIC:
        raise FormatError(f"bad header line {lines[0]!r}")
    if header[1] != str(_FORMAT_VERSION):
        raise FormatError(f"unsupported format version {header[1]!r}")
    try:
        horizon, n_initial, n_events = int(header[2]), int(header[3]), int(header[4])
    except ValueError as exc:
        raise FormatError(f"bad header counts: {exc}") from None
    if len(lines) != 1 + n_initial + n_events:
        raise FormatError(f"expected {1 + n_initial + n_events} lines, found {len(lines)}")

    waitlist: list[PatientState] = []
    for i in range(n_initial):
        where = f"line {i + 2}"
        fields = lines[1 + i].split(" ")
        if fields[0] != "P" or len(fields) != 11:
            raise FormatError(f"{where}: expected 'P' record with 11 fields")
        try:
            listed_time = int(fields[10])
        except ValueError as exc:
            raise FormatError(f"{where}: {exc}") from None
        waitlist.append(_parse_patient(fields[1:10], where, listed_time=listed_time, as_of_time=0))

    events: list[TrajectoryEvent] = []
    for i in range(n_events):
        where = f"line {1 + n_initial + i + 1}"
        fields = lines[1 + n_initial + i].split(" ")
        tag = fields[0]
        try:
            time = int(fields[1])
        except (IndexError, ValueError):
            raise FormatError(f"{where}: bad event time") from None
        if tag == "PA":
            events.append(PatientArrival(time=time, patient=_parse_patient(fields[2:], where, listed_time=time, as_of_time=time)))
        elif tag == "SU":
            if len(fields) != 7:
                raise FormatError(f"{where}: expected 7 fields for SU")
            try:
                events.append(
                    StatusUpdate(time=time, patient_id=fields[2], severity=float(fields[3]), status=int(fields[4]), cpra=float(fields[5]), lvad_days=int(fields[6]))
                )
            except ValueError as exc:
                raise FormatError(f"{where}: {exc}") from None
        elif tag == "DA":
            if len(fields) != 8:
                raise FormatError(f"{where}: expected 8 fields for DA")
            try:
                donor = DonorRecord(
                    donor_id=fields[2],
                    blood_type=_parse_blood(fields[3], where),
                    location=Location(region=int(fields[4]), x=float(fields[5]), y=float(fields[6])),
                    quality=float(fields[7]),
                    arrival_time=time,
                )
            except ValueError as exc:
                raise FormatError(f"{where}: {exc}") from None
            events.append(DonorArrival(time=time, donor=donor))
        elif tag == "PD":
            if len(fields) != 4:
                raise FormatError(f"{where}: expected 4 fields for PD")
            events.append(PatientDeparture(time=time, patient_id=fields[2], cause=fields[3]))
        else:
            raise FormatError(f"{where}: unknown event tag {tag!r}")
    return Trajectory(horizon_days=horizon, initial_waitlist=tuple(waitlist), events=tuple(events))


def save_trajectory(trajectory: Trajectory, path: str) -> None:
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write(serialize_trajectory(trajectory))


def load_trajectory(path: str) -> Trajectory:
    with open(path, "r", encoding="ascii") as fh:
        return parse_trajectory(fh.read())
