"""Command-line entry point for the allocation pipeline.

One binary, nine subcommands covering the full loop:

    generate     write a synthetic base trajectory
    augment      bootstrap short sub-horizon trajectories from a base one
    oracle       hindsight-optimal matching for a trajectory (matches CSV)
    train        imitation-train a potential model or linear score weights
    blackbox     budgeted direct search over linear score weights
    gradcheck    finite-difference audit of the training gradients
    policy-eval  simulate one policy on one trajectory
    report       simulate a policy roster over trajectories, write CSV + figures
    experiment   full manifest-driven run (generate/augment/train/evaluate)

Ground-truth settings (compatibility geometry, survival coefficients,
population process) resolve as: command-line flag > JSON config file
(``--config`` or $HEARTMATCH_CONFIG) > built-in default. The resolved values
are printed to stderr at startup so every run is auditable.

Exit codes: 0 success; 2 validation failure (bad flags, malformed values,
trajectory invariant violations); 3 numerical failure (non-finite training
loss, gradient check above tolerance); 4 I/O failure (missing or unparsable
files).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace
from typing import Sequence

import numpy as np

from .compat import CompatConfig, SurvivalModel
from .domain import (
    FormatError,
    Trajectory,
    TrajectoryValidationError,
    fmt_real,
    load_trajectory,
    require_valid,
    save_trajectory,
)
from .experiment import ExperimentManifest, run_experiment
from .figures import fig_mean_gain, fig_rates_by_blood_type
from .learn import (
    LOSSES,
    BlackboxConfig,
    NumericalError,
    TrainConfig,
    blackbox_optimize,
    build_dataset,
    grad_check,
    imitation_agreement,
    train,
    train_cas,
)
from .oracle import build_instance, solve
from .policies import (
    FEATURE_DIMS,
    CasPolicy,
    CasWeights,
    FeatureMapId,
    MyopicPolicy,
    PotentialPolicy,
    StatusQuoPolicy,
    init_potential_model,
    load_cas_weights,
    load_potential_model,
    save_cas_weights,
    save_potential_model,
)
from .popgen import PopulationConfig, compute_bounds, generate_trajectory, semisynthetic
from .reports import write_matches_csv, write_metrics_csv, write_report_csv
from .sim import GroupMetrics, metrics, monthly_report, run

CONFIG_ENV = "HEARTMATCH_CONFIG"

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_NUMERICAL = 3
EXIT_IO = 4


# --- configuration resolution -----------------------------------------------------


def _resolve_configs(args: argparse.Namespace) -> tuple[CompatConfig, SurvivalModel, PopulationConfig]:
    """Flag > config file > default; prints the resolved result to stderr."""
    path = getattr(args, "config", None) or os.environ.get(CONFIG_ENV)
    raw: dict = {}
    if path:
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
        if not isinstance(raw, dict):
            raise ValueError("config file must contain a JSON object")
        unknown = sorted(set(raw) - {"compat", "survival", "population"})
        if unknown:
            raise ValueError(f"unknown config sections: {unknown}")
    compat = CompatConfig.from_dict(raw["compat"]) if "compat" in raw else CompatConfig()
    survival = SurvivalModel.from_dict(raw["survival"]) if "survival" in raw else SurvivalModel()
    population = PopulationConfig.from_dict(raw["population"]) if "population" in raw else PopulationConfig()

    if getattr(args, "max_distance", None) is not None:
        compat = replace(compat, max_distance_nm=args.max_distance)
    overrides = {}
    for flag, fieldname in (
        ("donor_rate", "donor_rate_per_day"),
        ("patient_rate", "patient_arrival_rate_per_day"),
        ("initial_waitlist", "initial_waitlist_size"),
    ):
        value = getattr(args, flag, None)
        if value is not None:
            overrides[fieldname] = value
    if overrides:
        population = replace(population, **overrides)

    resolved = {"compat": compat.to_dict(), "survival": survival.to_dict(), "population": population.to_dict()}
    print(f"config: {json.dumps(resolved, sort_keys=True)}", file=sys.stderr)
    return compat, survival, population


def _load_valid(path: str) -> Trajectory:
    trajectory = load_trajectory(path)
    require_valid(trajectory)
    return trajectory


def _parse_policy(spec: str):
    """``[name=]kind`` where kind is myopic | status_quo | cas:<file> |
    potential:<file>."""
    name_part, eq, rest = spec.partition("=")
    name = name_part if eq else None
    body = rest if eq else spec
    kind, colon, path = body.partition(":")
    if kind == "myopic" and not colon:
        policy = MyopicPolicy()
    elif kind == "status_quo" and not colon:
        policy = StatusQuoPolicy()
    elif kind == "cas" and colon and path:
        policy = CasPolicy(load_cas_weights(path), name or "cas")
    elif kind == "potential" and colon and path:
        policy = PotentialPolicy(load_potential_model(path), name or "potential")
    else:
        raise ValueError(
            f"bad policy spec {spec!r}; expected [name=]myopic | [name=]status_quo"
            " | [name=]cas:<file> | [name=]potential:<file>"
        )
    if name:
        policy.name = name
    return policy


def _parse_hidden(text: str) -> tuple[int, ...]:
    text = text.strip()
    if not text or text == "-":
        return ()
    return tuple(int(part) for part in text.split(","))


# --- subcommand handlers -----------------------------------------------------------


def _cmd_generate(args: argparse.Namespace) -> int:
    _, _, population = _resolve_configs(args)
    if args.seed is not None:
        population = replace(population, rng_seed=args.seed)
    trajectory = generate_trajectory(population, args.horizon)
    save_trajectory(trajectory, args.out)
    print(
        f"wrote {args.out}: horizon={trajectory.horizon_days}"
        f" initial={len(trajectory.initial_waitlist)} events={len(trajectory.events)}"
    )
    return EXIT_OK


def _cmd_augment(args: argparse.Namespace) -> int:
    base = _load_valid(args.base)
    bounds = compute_bounds(base, args.window, k_offset_days=args.k_offset)
    print(
        f"bounds: donors [{bounds.donor_min}, {bounds.donor_max}]"
        f" patients [{bounds.patient_min}, {bounds.patient_max}]"
        f" window={bounds.window_days}d offset=±{bounds.k_offset_days}d",
        file=sys.stderr,
    )
    os.makedirs(args.out_dir, exist_ok=True)
    for i in range(args.count):
        resampled = semisynthetic(base, args.subhorizon, bounds, args.seed + i)
        path = os.path.join(args.out_dir, f"{args.prefix}{i + 1:02d}.traj")
        save_trajectory(resampled, path)
        print(f"wrote {path}: initial={len(resampled.initial_waitlist)} events={len(resampled.events)}")
    return EXIT_OK


def _cmd_oracle(args: argparse.Namespace) -> int:
    compat, survival, _ = _resolve_configs(args)
    trajectory = _load_valid(args.trajectory)
    instance = build_instance(trajectory, compat, survival)
    allocation = solve(instance)
    write_matches_csv(allocation.matches, args.out)
    print(
        f"donors={len(instance.donor_ids)} patients={len(instance.patient_ids)}"
        f" edges={len(instance.edges)} matches={len(allocation.matches)}"
        f" total_utility={fmt_real(allocation.total_utility)}"
    )
    return EXIT_OK


def _cmd_train(args: argparse.Namespace) -> int:
    compat, survival, _ = _resolve_configs(args)
    trajectories = [_load_valid(p) for p in args.data]
    feature_map = FeatureMapId(args.features)
    if args.target == "cas" and feature_map is not FeatureMapId.CAS14:
        raise ValueError("--target cas requires --features CAS14")
    dataset = build_dataset(trajectories, compat, survival, feature_map)
    tc = TrainConfig(
        loss=args.loss,
        epochs=args.epochs,
        batch_size=args.batch_size,
        learning_rate=args.learning_rate,
        l2=args.l2,
        clip_norm=args.clip_norm,
        dropout=args.dropout,
        importance_weighting=args.importance_weighting,
        seed=args.seed,
    )
    if args.target == "cas":
        trained = train_cas(dataset, CasWeights(weights=np.zeros(FEATURE_DIMS[feature_map])), tc)
        save_cas_weights(trained, args.out_model)
    else:
        m0 = init_potential_model(feature_map, args.model_kind, _parse_hidden(args.hidden), seed=args.seed)
        trained = train(dataset, m0, tc)
        save_potential_model(trained, args.out_model)
    agreement = imitation_agreement(trained, dataset)
    print(
        f"wrote {args.out_model}: examples={len(dataset)} loss={args.loss}"
        f" oracle_agreement={agreement:.4f}"
    )
    return EXIT_OK


def _cmd_blackbox(args: argparse.Namespace) -> int:
    compat, survival, _ = _resolve_configs(args)
    dims = FEATURE_DIMS[FeatureMapId.CAS14]
    if args.dims is not None and args.dims != dims:
        raise ValueError(f"--dims must equal the score-weight dimension ({dims})")
    trajectories = [_load_valid(p) for p in args.data]

    def mean_gain(theta: np.ndarray) -> float:
        policy = CasPolicy(CasWeights(weights=theta.copy()), "search")
        totals = [run(t, policy, compat, survival, validate=False).total_plyg for t in trajectories]
        return float(np.mean(totals))

    bc = BlackboxConfig(budget=args.budget, seed=args.seed, box_low=-args.box, box_high=args.box)
    result = blackbox_optimize(mean_gain, dims, bc)
    save_cas_weights(CasWeights(weights=result.theta), args.out_model)
    print(
        f"wrote {args.out_model}: evaluations={result.n_evaluations}"
        f" best_mean_plyg={fmt_real(result.value)}"
    )
    return EXIT_OK


def _cmd_gradcheck(args: argparse.Namespace) -> int:
    compat, survival, population = _resolve_configs(args)
    population = replace(
        population,
        rng_seed=args.seed,
        initial_waitlist_size=min(population.initial_waitlist_size, 40),
    )
    trajectory = generate_trajectory(population, 15)
    feature_map = FeatureMapId(args.features)
    dataset = build_dataset([trajectory], compat, survival, feature_map)
    if not dataset:
        raise ValueError("gradient-check trajectory produced no oracle matches; try another --seed")
    batch = dataset[: args.examples]
    m = init_potential_model(feature_map, args.model_kind, _parse_hidden(args.hidden), seed=args.seed)
    if m.kind == "mlp":
        # nonzero weights everywhere so the check exercises every layer
        rng = np.random.default_rng(args.seed)
        m = replace(m, params=rng.normal(0.0, 0.1, size=m.params.size))
    worst = grad_check(m, batch, args.loss, l2=args.l2, importance_weighting=args.importance_weighting)
    print(f"loss={args.loss} kind={m.kind} examples={len(batch)} max_rel_error={worst:.3e}")
    if not np.isfinite(worst) or worst > args.tolerance:
        raise NumericalError(f"gradient check failed: {worst:.3e} > tolerance {args.tolerance:g}")
    return EXIT_OK


def _cmd_policy_eval(args: argparse.Namespace) -> int:
    compat, survival, _ = _resolve_configs(args)
    trajectory = _load_valid(args.trajectory)
    policy = _parse_policy(args.policy)
    result = run(trajectory, policy, compat, survival)
    if args.out_matches:
        write_matches_csv(result.matches, args.out_matches)
    if args.metrics_out:
        rows = [("1", policy.name, g) for g in metrics(result, trajectory)]
        write_metrics_csv(rows, args.metrics_out)
    print(
        f"policy={policy.name} plyg={fmt_real(result.total_plyg)}"
        f" matches={len(result.matches)} discards={len(result.discards)} deaths={len(result.deaths)}"
    )
    return EXIT_OK


def _cmd_report(args: argparse.Namespace) -> int:
    compat, survival, _ = _resolve_configs(args)
    trajectories = [_load_valid(p) for p in args.trajectories]
    roster = [_parse_policy(s) for s in args.policy]
    names = [p.name for p in roster]
    if len(set(names)) != len(names):
        raise ValueError(f"duplicate policy names {names}; disambiguate with name=spec")

    rows = monthly_report(trajectories, roster, compat, survival)
    write_report_csv(rows, args.out)
    print(f"wrote {args.out}")

    metric_rows: list[tuple[str, str, GroupMetrics]] = []
    for policy in roster:
        for month, t in enumerate(trajectories, start=1):
            result = run(t, policy, compat, survival, validate=False)
            metric_rows.extend((str(month), policy.name, g) for g in metrics(result, t))
    if args.metrics_out:
        write_metrics_csv(metric_rows, args.metrics_out)
        print(f"wrote {args.metrics_out}")

    if not args.no_figures:
        fig_dir = os.path.dirname(os.path.abspath(args.out))
        gain_png = os.path.join(fig_dir, "mean_gain_by_policy.png")
        fig_mean_gain(rows, gain_png)
        print(f"wrote {gain_png}")
        for rate in ("mortality_per_wait_year", "transplant_per_wait_year"):
            rate_png = os.path.join(fig_dir, f"{rate}_by_blood_type.png")
            fig_rates_by_blood_type(metric_rows, rate, rate_png)
            print(f"wrote {rate_png}")

    for r in rows:
        if r.month == "mean":
            ratio = "" if r.competitive_ratio is None else f" ratio={r.competitive_ratio:.4f}"
            print(f"mean {r.policy}: plyg={fmt_real(r.plyg)} upper_bound={fmt_real(r.upper_bound)}{ratio}")
    return EXIT_OK


def _cmd_experiment(args: argparse.Namespace) -> int:
    if args.manifest:
        with open(args.manifest, "r", encoding="utf-8") as fh:
            manifest = ExperimentManifest.from_dict(json.load(fh))
    else:
        manifest = ExperimentManifest()
    print(f"manifest: {json.dumps(manifest.to_dict(), sort_keys=True)}", file=sys.stderr)
    result = run_experiment(
        manifest,
        out_dir=args.out_dir,
        write_figures=not args.no_figures,
        log=lambda msg: print(f"stage {msg}", file=sys.stderr),
    )
    for r in result.report_rows:
        if r.month == "mean":
            ratio = "" if r.competitive_ratio is None else f" ratio={r.competitive_ratio:.4f}"
            print(f"mean {r.policy}: plyg={fmt_real(r.plyg)}{ratio}")
    print(f"wrote {args.out_dir}")
    return EXIT_OK


# --- parser ------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="heartmatch",
        description="Non-myopic allocation policies for online donor-patient matching.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    config_parent = argparse.ArgumentParser(add_help=False)
    config_parent.add_argument("--config", help=f"JSON config file (default: ${CONFIG_ENV})")
    config_parent.add_argument("--max-distance", type=float, help="override compat.max_distance_nm")
    config_parent.add_argument("--donor-rate", type=float, help="override population.donor_rate")
    config_parent.add_argument("--patient-rate", type=float, help="override population.patient_rate")
    config_parent.add_argument("--initial-waitlist", type=int, help="override population.initial_waitlist_size")

    p = sub.add_parser("generate", parents=[config_parent], help="write a synthetic base trajectory")
    p.add_argument("--horizon", type=int, required=True, help="horizon length in days")
    p.add_argument("--seed", type=int, help="override population.rng_seed")
    p.add_argument("--out", required=True, help="output trajectory file")
    p.set_defaults(func=_cmd_generate)

    p = sub.add_parser("augment", help="bootstrap sub-horizon trajectories from a base trajectory")
    p.add_argument("--base", required=True, help="source trajectory file")
    p.add_argument("--subhorizon", type=int, required=True, help="resampled horizon in days")
    p.add_argument("--window", type=int, required=True, help="sliding-window width for volume bounds")
    p.add_argument("--count", type=int, default=1, help="number of trajectories to write")
    p.add_argument("--seed", type=int, default=0, help="seed of the first draw; draw i uses seed+i")
    p.add_argument("--k-offset", type=int, default=7, help="max listing-time shift for initial patients")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--prefix", default="aug_")
    p.set_defaults(func=_cmd_augment)

    p = sub.add_parser("oracle", parents=[config_parent], help="hindsight-optimal matching for one trajectory")
    p.add_argument("--trajectory", required=True)
    p.add_argument("--out", required=True, help="matches CSV output path")
    p.set_defaults(func=_cmd_oracle)

    p = sub.add_parser("train", parents=[config_parent], help="imitation-train a policy on oracle decisions")
    p.add_argument("--data", nargs="+", required=True, help="training trajectory files")
    p.add_argument("--target", choices=("potential", "cas"), default="potential")
    p.add_argument("--features", choices=[fm.value for fm in FeatureMapId], default="Blood4")
    p.add_argument("--model-kind", choices=("linear", "mlp"), default="linear")
    p.add_argument("--hidden", default="", help='comma-separated MLP widths, e.g. "128,64,32"')
    p.add_argument("--loss", choices=sorted(LOSSES), default="pairwise")
    p.add_argument("--epochs", type=int, default=25)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--learning-rate", type=float, default=1e-4)
    p.add_argument("--l2", type=float, default=1e-3)
    p.add_argument("--clip-norm", type=float, default=1.0)
    p.add_argument("--dropout", type=float, default=0.3)
    p.add_argument("--importance-weighting", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-model", required=True)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("blackbox", parents=[config_parent], help="budgeted direct search over linear score weights")
    p.add_argument("--data", nargs="+", required=True, help="trajectories scored by mean simulated gain")
    p.add_argument("--budget", type=int, default=100, help="exact number of objective evaluations")
    p.add_argument("--dims", type=int, help="cross-check: must equal the score-weight dimension")
    p.add_argument("--box", type=float, default=5.0, help="search box half-width")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-model", required=True)
    p.set_defaults(func=_cmd_blackbox)

    p = sub.add_parser("gradcheck", parents=[config_parent], help="finite-difference audit of training gradients")
    p.add_argument("--features", choices=[fm.value for fm in FeatureMapId], default="Blood4")
    p.add_argument("--model-kind", choices=("linear", "mlp"), default="linear")
    p.add_argument("--hidden", default="")
    p.add_argument("--loss", choices=sorted(LOSSES), default="pairwise")
    p.add_argument("--l2", type=float, default=1e-3)
    p.add_argument("--importance-weighting", action="store_true")
    p.add_argument("--examples", type=int, default=8, help="batch size for the check")
    p.add_argument("--tolerance", type=float, default=1e-5)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_gradcheck)

    p = sub.add_parser("policy-eval", parents=[config_parent], help="simulate one policy on one trajectory")
    p.add_argument("--trajectory", required=True)
    p.add_argument("--policy", required=True, help="myopic | status_quo | cas:<file> | potential:<file>")
    p.add_argument("--out-matches", help="optional matches CSV")
    p.add_argument("--metrics-out", help="optional per-blood-group metrics CSV")
    p.set_defaults(func=_cmd_policy_eval)

    p = sub.add_parser("report", parents=[config_parent], help="policy roster over trajectories: CSV plus figures")
    p.add_argument("--trajectories", nargs="+", required=True)
    p.add_argument(
        "--policy",
        action="append",
        required=True,
        help="repeatable; [name=]myopic | [name=]status_quo | [name=]cas:<file> | [name=]potential:<file>",
    )
    p.add_argument("--out", required=True, help="report CSV path; figures land beside it")
    p.add_argument("--metrics-out", help="optional per-blood-group metrics CSV")
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=_cmd_report)

    p = sub.add_parser("experiment", help="manifest-driven end-to-end run")
    p.add_argument("--manifest", help="manifest JSON; omitted fields use the desk-scale defaults")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=_cmd_experiment)

    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except TrajectoryValidationError as exc:
        print(f"heartmatch {args.command}: validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except FormatError as exc:
        print(f"heartmatch {args.command}: file format error: {exc}", file=sys.stderr)
        return EXIT_IO
    except NumericalError as exc:
        print(f"heartmatch {args.command}: numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ValueError as exc:
        print(f"heartmatch {args.command}: validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as exc:
        print(f"heartmatch {args.command}: i/o error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
