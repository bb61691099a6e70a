"""Report figures rendered to PNG files next to the CSV output."""

from __future__ import annotations

from typing import Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .domain import BLOOD_ORDER
from .sim import GroupMetrics, ReportRow


def fig_mean_gain(rows: Sequence[ReportRow], path: str) -> None:
    """Bar chart of mean lifetime gain per policy with the hindsight bound."""
    means = [(r.policy, r.plyg, r.upper_bound) for r in rows if r.month == "mean"]
    if not means:
        raise ValueError("report rows contain no mean row")
    names = [m[0] for m in means]
    values = [m[1] for m in means]
    bound = means[0][2]

    fig, ax = plt.subplots(figsize=(1.2 * len(names) + 2, 4))
    ax.bar(np.arange(len(names)), values, color="#4878a8")
    ax.axhline(bound, color="#b04030", linestyle="--", linewidth=1.2, label="hindsight optimum")
    ax.set_xticks(np.arange(len(names)))
    ax.set_xticklabels(names, rotation=30, ha="right")
    ax.set_ylabel("mean life-years gained per month")
    ax.legend(frameon=False)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def fig_rates_by_blood_type(
    rows: Sequence[tuple[str, str, GroupMetrics]],
    rate: str,
    path: str,
    ylabel: str | None = None,
) -> None:
    """Grouped bars: one cluster per blood type, one bar per policy, height =
    the chosen rate aggregated over months (sums of numerators/denominators)."""
    policies: list[str] = []
    for _, policy, _ in rows:
        if policy not in policies:
            policies.append(policy)
    groups = [b.value for b in BLOOD_ORDER]

    num_key, denom_key = {
        "transplant_per_patient": ("transplants", "patients"),
        "transplant_per_wait_year": ("transplants", "wait_years"),
        "mortality_per_patient": ("deaths", "patients"),
        "mortality_per_wait_year": ("deaths", "wait_years"),
    }[rate]

    heights = np.zeros((len(policies), len(groups)))
    for pi, policy in enumerate(policies):
        for gi, group in enumerate(groups):
            num = 0.0
            denom = 0.0
            for _, row_policy, g in rows:
                if row_policy == policy and g.group == group:
                    num += getattr(g, num_key)
                    denom += getattr(g, denom_key)
            heights[pi, gi] = num / denom if denom else 0.0

    width = 0.8 / len(policies)
    fig, ax = plt.subplots(figsize=(8, 4))
    for pi, policy in enumerate(policies):
        ax.bar(np.arange(len(groups)) + pi * width, heights[pi], width=width, label=policy)
    ax.set_xticks(np.arange(len(groups)) + 0.4 - width / 2)
    ax.set_xticklabels(groups)
    ax.set_xlabel("patient blood type")
    ax.set_ylabel(ylabel or rate.replace("_", " "))
    ax.legend(frameon=False, fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
