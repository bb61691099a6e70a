"""CSV emission for matches, outcome metrics, and the per-month report.

All floats are written with 17 significant digits and a fixed column order,
so identical inputs produce byte-identical files.
"""

from __future__ import annotations

import csv
from typing import Sequence

from .domain import MatchRecord, fmt_real
from .sim import GroupMetrics, ReportRow

MATCHES_COLUMNS = ("time", "donor_id", "patient_id", "utility")
METRICS_COLUMNS = (
    "month",
    "policy",
    "blood_group",
    "patients",
    "transplants",
    "deaths",
    "wait_years",
    "transplant_per_patient",
    "transplant_per_wait_year",
    "mortality_per_patient",
    "mortality_per_wait_year",
)
REPORT_COLUMNS = ("month", "policy", "plyg", "upper_bound", "competitive_ratio")


def _opt(x: float | None) -> str:
    return "" if x is None else fmt_real(x)


def write_matches_csv(matches: Sequence[MatchRecord], path: str) -> None:
    with open(path, "w", encoding="ascii", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(MATCHES_COLUMNS)
        for m in matches:
            writer.writerow([m.time, m.donor_id, m.patient_id, fmt_real(m.utility)])


def write_metrics_csv(rows: Sequence[tuple[str, str, GroupMetrics]], path: str) -> None:
    """Rows are (month, policy, group metrics); rates are blank when the
    denominator is zero."""
    with open(path, "w", encoding="ascii", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(METRICS_COLUMNS)
        for month, policy, g in rows:
            writer.writerow(
                [
                    month,
                    policy,
                    g.group,
                    g.patients,
                    g.transplants,
                    g.deaths,
                    fmt_real(g.wait_years),
                    _opt(g.transplant_per_patient),
                    _opt(g.transplant_per_wait_year),
                    _opt(g.mortality_per_patient),
                    _opt(g.mortality_per_wait_year),
                ]
            )


def write_report_csv(rows: Sequence[ReportRow], path: str) -> None:
    with open(path, "w", encoding="ascii", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(REPORT_COLUMNS)
        for r in rows:
            writer.writerow([r.month, r.policy, fmt_real(r.plyg), fmt_real(r.upper_bound), _opt(r.competitive_ratio)])
