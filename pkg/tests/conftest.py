"""Shared builders for hand-sized fixtures. Randomized tests seed their own
generators so every run is identical."""

import pytest

from heartmatch.domain import (
    BloodType,
    DonorArrival,
    DonorRecord,
    Location,
    PatientState,
    Trajectory,
    status_from_severity,
)


def make_patient(
    pid="p1",
    blood=BloodType.O,
    region=1,
    x=0.0,
    y=0.0,
    severity=0.6,
    cpra=0.1,
    lvad_days=0,
    listed_time=0,
    as_of_time=0,
):
    return PatientState(
        patient_id=pid,
        blood_type=blood,
        location=Location(region=region, x=x, y=y),
        severity=severity,
        status=status_from_severity(severity),
        cpra=cpra,
        lvad_days=lvad_days,
        listed_time=listed_time,
        as_of_time=as_of_time,
    )


def make_donor(did="d1", blood=BloodType.O, region=1, x=0.0, y=0.0, quality=0.8, time=1):
    return DonorRecord(
        donor_id=did,
        blood_type=blood,
        location=Location(region=region, x=x, y=y),
        quality=quality,
        arrival_time=time,
    )


@pytest.fixture
def two_patient_trajectory():
    p1 = make_patient("p1", BloodType.AB, severity=0.8)
    p2 = make_patient("p2", BloodType.O, severity=0.6)
    d1 = make_donor("d1", BloodType.O, time=1)
    d2 = make_donor("d2", BloodType.A, time=2)
    return Trajectory(
        horizon_days=3,
        initial_waitlist=(p1, p2),
        events=(DonorArrival(time=1, donor=d1), DonorArrival(time=2, donor=d2)),
    )
