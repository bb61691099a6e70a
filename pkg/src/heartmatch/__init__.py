"""Non-myopic allocation policies for online donor-patient matching.

The package simulates donor/patient arrival trajectories, computes the
hindsight-optimal matching as an upper bound and an imitation target, and
trains potential-shaped policies that trade immediate transplant benefit
against the option value of waiting.
"""

from .compat import CompatConfig, MatchClass, SurvivalModel, feasible, match_class, utility
from .domain import (
    BloodType,
    DonorArrival,
    DonorRecord,
    FormatError,
    MatchRecord,
    PatientArrival,
    PatientDeparture,
    PatientState,
    StatusUpdate,
    Trajectory,
    TrajectoryValidationError,
    load_trajectory,
    save_trajectory,
    validate_trajectory,
)
from .experiment import ExperimentManifest, ExperimentResult, PolicySpec, run_experiment
from .learn import (
    BlackboxConfig,
    BlackboxResult,
    ImitationExample,
    NumericalError,
    TrainConfig,
    blackbox_optimize,
    build_dataset,
    grad_check,
    imitation_agreement,
    train,
    train_cas,
)
from .oracle import BipartiteInstance, OptimalAllocation, build_instance, solve, upper_bound
from .policies import (
    CasPolicy,
    CasWeights,
    FeatureMapId,
    MyopicPolicy,
    PotentialModel,
    PotentialPolicy,
    StatusQuoPolicy,
    init_potential_model,
    load_cas_weights,
    load_potential_model,
    save_cas_weights,
    save_potential_model,
)
from .popgen import PopulationConfig, ResampleBounds, compute_bounds, generate_trajectory, semisynthetic
from .sim import GroupMetrics, ReportRow, SimulationResult, metrics, monthly_report, run

__version__ = "0.1.0"

__all__ = [
    "BipartiteInstance",
    "BlackboxConfig",
    "BlackboxResult",
    "BloodType",
    "CasPolicy",
    "CasWeights",
    "CompatConfig",
    "DonorArrival",
    "DonorRecord",
    "ExperimentManifest",
    "ExperimentResult",
    "FeatureMapId",
    "FormatError",
    "GroupMetrics",
    "ImitationExample",
    "MatchClass",
    "MatchRecord",
    "MyopicPolicy",
    "NumericalError",
    "OptimalAllocation",
    "PatientArrival",
    "PatientDeparture",
    "PatientState",
    "PolicySpec",
    "PopulationConfig",
    "PotentialModel",
    "PotentialPolicy",
    "ReportRow",
    "ResampleBounds",
    "SimulationResult",
    "StatusQuoPolicy",
    "StatusUpdate",
    "SurvivalModel",
    "Trajectory",
    "TrainConfig",
    "TrajectoryValidationError",
    "blackbox_optimize",
    "build_dataset",
    "build_instance",
    "compute_bounds",
    "feasible",
    "generate_trajectory",
    "grad_check",
    "imitation_agreement",
    "init_potential_model",
    "load_cas_weights",
    "load_potential_model",
    "load_trajectory",
    "match_class",
    "metrics",
    "monthly_report",
    "run",
    "run_experiment",
    "save_cas_weights",
    "save_potential_model",
    "save_trajectory",
    "semisynthetic",
    "solve",
    "train",
    "train_cas",
    "upper_bound",
    "utility",
    "validate_trajectory",
]
