"""Branching processes in random environment: deviation rates, simulation,
exact desk-scale oracles, and tilted importance sampling."""

from .envmodel import (
    EnvironmentLaw,
    OffspringDistribution,
    build_environment,
    build_offspring,
    environment_from_dict,
    environment_from_json,
    environment_to_dict,
    environment_to_json,
)
from .errors import (
    BPREError,
    BudgetExceededError,
    COutOfRangeError,
    CapTooSmallError,
    DegenerateLawError,
    DuplicateKeyError,
    MassNotOneError,
    NegativeProbError,
    NoEventMassError,
    NoHoldingPossibleError,
    NotStronglySupercriticalError,
    OutOfHullError,
    SideMismatchError,
    TOutOfRangeError,
    TooManyComponentsError,
    VersionMismatchError,
    WeightsNotOneError,
    ZeroEstimateError,
    ZeroMeanComponentError,
)
from .ratefn import (
    LowerDeviationRate,
    RateProfile,
    Regime,
    chernoff_bound,
    clipped_walk_rate,
    limit_profile,
    log_mgf,
    lower_deviation_rate,
    tilt_parameter,
    two_env_walk_rate,
    walk_rate,
)
from .results import EstimatorResult, Method
from .rng import replica_stream
from .simulate import (
    SimConfig,
    Trajectory,
    branch_step,
    final_states,
    random_lineage,
    run,
    run_batch,
)
from .oracle import (
    ConditionalTrajectoryResult,
    ExactDistribution,
    conditional_trajectory,
    population_distribution,
    walk_tail,
)
from .rare_event import (
    LowerTailEstimate,
    RatePoint,
    TakeOffResult,
    TiltedLaw,
    TrajectoryProfile,
    conditional_profile,
    empirical_rate,
    estimate_lower_tail,
    estimate_upper_tail,
    rate_curve,
    take_off_statistics,
    tilt,
    tilt_toward,
)
from .cells import (
    CellTreeConfig,
    CellTreeResult,
    IdentityReport,
    expected_count_identity,
    simulate_cell_tree,
    uniform_leaf_counts,
)

__version__ = "0.1.0"

__all__ = [
    "BPREError",
    "BudgetExceededError",
    "COutOfRangeError",
    "CapTooSmallError",
    "CellTreeConfig",
    "CellTreeResult",
    "ConditionalTrajectoryResult",
    "DegenerateLawError",
    "DuplicateKeyError",
    "EnvironmentLaw",
    "EstimatorResult",
    "ExactDistribution",
    "IdentityReport",
    "LowerDeviationRate",
    "LowerTailEstimate",
    "MassNotOneError",
    "Method",
    "NegativeProbError",
    "NoEventMassError",
    "NoHoldingPossibleError",
    "NotStronglySupercriticalError",
    "OffspringDistribution",
    "OutOfHullError",
    "RatePoint",
    "RateProfile",
    "Regime",
    "SideMismatchError",
    "SimConfig",
    "TOutOfRangeError",
    "TakeOffResult",
    "TiltedLaw",
    "TooManyComponentsError",
    "Trajectory",
    "TrajectoryProfile",
    "VersionMismatchError",
    "WeightsNotOneError",
    "ZeroEstimateError",
    "ZeroMeanComponentError",
    "branch_step",
    "build_environment",
    "build_offspring",
    "chernoff_bound",
    "clipped_walk_rate",
    "conditional_profile",
    "conditional_trajectory",
    "empirical_rate",
    "environment_from_dict",
    "environment_from_json",
    "environment_to_dict",
    "environment_to_json",
    "estimate_lower_tail",
    "estimate_upper_tail",
    "expected_count_identity",
    "final_states",
    "limit_profile",
    "log_mgf",
    "lower_deviation_rate",
    "population_distribution",
    "random_lineage",
    "rate_curve",
    "replica_stream",
    "run",
    "run_batch",
    "simulate_cell_tree",
    "take_off_statistics",
    "tilt",
    "tilt_parameter",
    "tilt_toward",
    "two_env_walk_rate",
    "uniform_leaf_counts",
    "walk_rate",
    "walk_tail",
]
