"""End-to-end experiment: generate, augment, imitate, search, evaluate, report.

A manifest pins every input: ground-truth configs, horizons, seeds, and the
policy roster. Running the same manifest twice produces byte-identical CSV
output. Stages:

  1. generate one long base trajectory and compute resampling window bounds;
  2. bootstrap short training months from it;
  3. solve the hindsight oracle on each training month and build imitation
     datasets per feature map;
  4. train the roster (imitation potentials and score weights; optionally a
     black-box weight search scored by simulated lifetime gain on the
     training months);
  5. simulate every policy on freshly generated held-out months and emit
     report.csv / metrics.csv / model files / figures.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Mapping

import numpy as np

from .compat import CompatConfig, SurvivalModel
from .domain import Trajectory, save_trajectory
from .learn import (
    BlackboxConfig,
    BlackboxResult,
    TrainConfig,
    blackbox_optimize,
    build_dataset,
    train,
    train_cas,
)
from .figures import fig_mean_gain, fig_rates_by_blood_type
from .policies import (
    FEATURE_DIMS,
    CasPolicy,
    CasWeights,
    FeatureMapId,
    MyopicPolicy,
    PotentialModel,
    PotentialPolicy,
    StatusQuoPolicy,
    init_potential_model,
    save_cas_weights,
    save_potential_model,
)
from .popgen import PopulationConfig, compute_bounds, generate_trajectory, semisynthetic
from .reports import write_metrics_csv, write_report_csv
from .sim import GroupMetrics, ReportRow, metrics, monthly_report, run


@dataclass(frozen=True)
class PolicySpec:
    """One roster entry. `kind` selects the family:
    myopic | status_quo | potential | cas_imitation | cas_blackbox."""

    name: str
    kind: str
    feature_map: str = "Blood4"
    model_kind: str = "linear"
    hidden: tuple[int, ...] = ()
    loss: str = "pairwise"
    learning_rate: float | None = None  # None = TrainConfig default
    epochs: int | None = None
    importance_weighting: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("myopic", "status_quo", "potential", "cas_imitation", "cas_blackbox"):
            raise ValueError(f"unknown policy kind {self.kind!r}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d

    @classmethod
    def from_dict(cls, data: Mapping) -> "PolicySpec":
        kwargs = dict(data)
        if "hidden" in kwargs:
            kwargs["hidden"] = tuple(int(h) for h in kwargs["hidden"])
        return cls(**kwargs)


def _default_roster() -> tuple[PolicySpec, ...]:
    return (
        PolicySpec(name="status_quo", kind="status_quo"),
        PolicySpec(name="myopic", kind="myopic"),
        PolicySpec(name="cas_blackbox", kind="cas_blackbox"),
        PolicySpec(name="cas_pairwise", kind="cas_imitation", feature_map="CAS14", loss="pairwise", learning_rate=0.02),
        PolicySpec(name="pot_blood4_hinge", kind="potential", feature_map="Blood4", loss="hinge", learning_rate=0.02),
        PolicySpec(name="pot_blood4_pairwise", kind="potential", feature_map="Blood4", loss="pairwise", learning_rate=0.02),
        PolicySpec(name="pot_region13_listwise", kind="potential", feature_map="BloodRegion13", loss="listwise", learning_rate=0.02),
        PolicySpec(
            name="pot_state34_listwise",
            kind="potential",
            feature_map="MatchState34",
            model_kind="mlp",
            hidden=(128, 64, 32),
            loss="listwise",
        ),
    )


def _default_survival() -> SurvivalModel:
    # Sharper quality-severity interaction than the library default: which
    # patient benefits most depends on the organ, which rank-only policies
    # cannot express.
    return SurvivalModel(transplant_coeffs=(1.0, 0.25, 0.8, 0.03, -0.35, 0.08))


def _default_population() -> PopulationConfig:
    # Desk-scale world where allocation order matters: organs scarce relative
    # to arrivals, small pools so displacing a type-restricted patient is
    # rarely repaired later, and wide quality spread with fast progression.
    return PopulationConfig(
        donor_rate_per_day=0.8,
        patient_arrival_rate_per_day=1.2,
        initial_waitlist_size=25,
        death_hazard_scale=0.15,
        donor_quality_alpha=2.5,
        donor_quality_beta=1.6,
    )


@dataclass(frozen=True)
class ExperimentManifest:
    compat: CompatConfig = field(default_factory=CompatConfig)
    survival: SurvivalModel = field(default_factory=_default_survival)
    population: PopulationConfig = field(default_factory=_default_population)
    base_horizon_days: int = 90
    month_days: int = 30
    window_days: int = 30
    n_training_months: int = 12
    augment_seed: int = 7000
    eval_seeds: tuple[int, ...] = tuple(range(9101, 9110))
    policies: tuple[PolicySpec, ...] = field(default_factory=_default_roster)
    blackbox_budget: int = 100
    blackbox_seed: int = 11
    blackbox_box: float = 5.0

    def __post_init__(self):
        if self.month_days > self.base_horizon_days:
            raise ValueError("month_days cannot exceed base_horizon_days")
        if self.window_days > self.base_horizon_days:
            raise ValueError("window_days cannot exceed base_horizon_days")
        if len({spec.name for spec in self.policies}) != len(self.policies):
            raise ValueError("policy names must be unique")

    def to_dict(self) -> dict:
        return {
            "compat": self.compat.to_dict(),
            "survival": self.survival.to_dict(),
            "population": self.population.to_dict(),
            "base_horizon_days": self.base_horizon_days,
            "month_days": self.month_days,
            "window_days": self.window_days,
            "n_training_months": self.n_training_months,
            "augment_seed": self.augment_seed,
            "eval_seeds": list(self.eval_seeds),
            "policies": [spec.to_dict() for spec in self.policies],
            "blackbox_budget": self.blackbox_budget,
            "blackbox_seed": self.blackbox_seed,
            "blackbox_box": self.blackbox_box,
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "ExperimentManifest":
        kwargs: dict = {}
        if "compat" in data:
            kwargs["compat"] = CompatConfig.from_dict(data["compat"])
        if "survival" in data:
            kwargs["survival"] = SurvivalModel.from_dict(data["survival"])
        if "population" in data:
            kwargs["population"] = PopulationConfig.from_dict(data["population"])
        for key in ("base_horizon_days", "month_days", "window_days", "n_training_months", "augment_seed", "blackbox_budget", "blackbox_seed"):
            if key in data:
                kwargs[key] = int(data[key])
        if "blackbox_box" in data:
            kwargs["blackbox_box"] = float(data["blackbox_box"])
        if "eval_seeds" in data:
            kwargs["eval_seeds"] = tuple(int(s) for s in data["eval_seeds"])
        if "policies" in data:
            kwargs["policies"] = tuple(PolicySpec.from_dict(p) for p in data["policies"])
        return cls(**kwargs)


@dataclass
class ExperimentResult:
    manifest: ExperimentManifest
    base_trajectory: Trajectory
    training_months: list[Trajectory]
    eval_months: list[Trajectory]
    policies: dict[str, object]  # name -> simulator policy
    potential_models: dict[str, PotentialModel]
    cas_weights: dict[str, CasWeights]
    blackbox: BlackboxResult | None
    report_rows: tuple[ReportRow, ...]
    metric_rows: list[tuple[str, str, GroupMetrics]]

    def mean_plyg(self, policy_name: str) -> float:
        for r in self.report_rows:
            if r.month == "mean" and r.policy == policy_name:
                return r.plyg
        raise KeyError(policy_name)


def _train_config_for(spec: PolicySpec) -> TrainConfig:
    tc = TrainConfig(loss=spec.loss, seed=spec.seed, importance_weighting=spec.importance_weighting)
    if spec.learning_rate is not None:
        tc = replace(tc, learning_rate=spec.learning_rate)
    if spec.epochs is not None:
        tc = replace(tc, epochs=spec.epochs)
    return tc


def run_experiment(
    manifest: ExperimentManifest,
    out_dir: str | None = None,
    write_figures: bool = True,
    log: "Callable[[str], None] | None" = None,
) -> ExperimentResult:
    def stage(msg: str) -> None:
        if log is not None:
            log(msg)

    compat_cfg = manifest.compat
    survival = manifest.survival

    stage("generate: base trajectory")
    base = generate_trajectory(manifest.population, manifest.base_horizon_days)
    bounds = compute_bounds(base, manifest.window_days)
    stage(f"augment: {manifest.n_training_months} training months")
    training = [
        semisynthetic(base, manifest.month_days, bounds, manifest.augment_seed + i)
        for i in range(manifest.n_training_months)
    ]
    stage(f"generate: {len(manifest.eval_seeds)} held-out months")
    eval_months = [
        generate_trajectory(replace(manifest.population, rng_seed=seed), manifest.month_days)
        for seed in manifest.eval_seeds
    ]

    needed_maps = {FeatureMapId(spec.feature_map) for spec in manifest.policies if spec.kind == "potential"}
    if any(spec.kind == "cas_imitation" for spec in manifest.policies):
        needed_maps.add(FeatureMapId.CAS14)
    stage(f"oracle: imitation datasets for {[fm.value for fm in sorted(needed_maps, key=lambda f: f.value)]}")
    datasets = {fm: build_dataset(training, compat_cfg, survival, fm) for fm in sorted(needed_maps, key=lambda f: f.value)}

    policies: dict[str, object] = {}
    potential_models: dict[str, PotentialModel] = {}
    cas_weights: dict[str, CasWeights] = {}
    blackbox_result: BlackboxResult | None = None

    for spec in manifest.policies:
        stage(f"train: {spec.name} ({spec.kind})")
        if spec.kind == "myopic":
            policies[spec.name] = MyopicPolicy()
            policies[spec.name].name = spec.name
        elif spec.kind == "status_quo":
            policies[spec.name] = StatusQuoPolicy()
            policies[spec.name].name = spec.name
        elif spec.kind == "potential":
            fm = FeatureMapId(spec.feature_map)
            m0 = init_potential_model(fm, spec.model_kind, spec.hidden, seed=spec.seed)
            m = train(datasets[fm], m0, _train_config_for(spec))
            potential_models[spec.name] = m
            policies[spec.name] = PotentialPolicy(m, spec.name)
        elif spec.kind == "cas_imitation":
            w0 = CasWeights(weights=np.zeros(FEATURE_DIMS[FeatureMapId.CAS14]))
            w = train_cas(datasets[FeatureMapId.CAS14], w0, _train_config_for(spec))
            cas_weights[spec.name] = w
            policies[spec.name] = CasPolicy(w, spec.name)
        elif spec.kind == "cas_blackbox":

            def mean_training_gain(theta: np.ndarray) -> float:
                policy = CasPolicy(CasWeights(weights=theta.copy()), "search")
                totals = [run(t, policy, compat_cfg, survival, validate=False).total_plyg for t in training]
                return float(np.mean(totals))

            bc = BlackboxConfig(
                budget=manifest.blackbox_budget,
                seed=manifest.blackbox_seed,
                box_low=-manifest.blackbox_box,
                box_high=manifest.blackbox_box,
            )
            blackbox_result = blackbox_optimize(mean_training_gain, FEATURE_DIMS[FeatureMapId.CAS14], bc)
            w = CasWeights(weights=blackbox_result.theta)
            cas_weights[spec.name] = w
            policies[spec.name] = CasPolicy(w, spec.name)

    roster = [policies[spec.name] for spec in manifest.policies]
    stage("simulate: held-out evaluation")
    report_rows = monthly_report(eval_months, roster, compat_cfg, survival)

    metric_rows: list[tuple[str, str, GroupMetrics]] = []
    for policy in roster:
        for month, t in enumerate(eval_months, start=1):
            res = run(t, policy, compat_cfg, survival, validate=False)
            for g in metrics(res, t):
                metric_rows.append((str(month), policy.name, g))

    result = ExperimentResult(
        manifest=manifest,
        base_trajectory=base,
        training_months=training,
        eval_months=eval_months,
        policies=policies,
        potential_models=potential_models,
        cas_weights=cas_weights,
        blackbox=blackbox_result,
        report_rows=report_rows,
        metric_rows=metric_rows,
    )
    if out_dir is not None:
        stage(f"report: writing {out_dir}")
        _write_outputs(result, out_dir, write_figures)
    return result


def _write_outputs(result: ExperimentResult, out_dir: str, write_figures: bool) -> None:
    os.makedirs(out_dir, exist_ok=True)
    traj_dir = os.path.join(out_dir, "trajectories")
    model_dir = os.path.join(out_dir, "models")
    os.makedirs(traj_dir, exist_ok=True)
    os.makedirs(model_dir, exist_ok=True)

    save_trajectory(result.base_trajectory, os.path.join(traj_dir, "base.traj"))
    for i, t in enumerate(result.training_months, start=1):
        save_trajectory(t, os.path.join(traj_dir, f"train_{i:02d}.traj"))
    for i, t in enumerate(result.eval_months, start=1):
        save_trajectory(t, os.path.join(traj_dir, f"eval_{i:02d}.traj"))

    for name, m in result.potential_models.items():
        save_potential_model(m, os.path.join(model_dir, f"{name}.model"))
    for name, w in result.cas_weights.items():
        save_cas_weights(w, os.path.join(model_dir, f"{name}.cas"))

    write_report_csv(result.report_rows, os.path.join(out_dir, "report.csv"))
    write_metrics_csv(result.metric_rows, os.path.join(out_dir, "metrics.csv"))
    with open(os.path.join(out_dir, "manifest.json"), "w", encoding="ascii") as fh:
        json.dump(result.manifest.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")

    if write_figures:
        fig_dir = os.path.join(out_dir, "figures")
        os.makedirs(fig_dir, exist_ok=True)
        fig_mean_gain(result.report_rows, os.path.join(fig_dir, "mean_gain_by_policy.png"))
        for rate in ("mortality_per_wait_year", "transplant_per_wait_year"):
            fig_rates_by_blood_type(result.metric_rows, rate, os.path.join(fig_dir, f"{rate}_by_blood_type.png"))
