"""Budgeted online ranking of evaluation targets from pairwise preferences."""

from .config import ConfigError, ExperimentConfig
from .engine import (
    POLICY_BALANCED,
    POLICY_NAIVE,
    Determination,
    EvaluationRequest,
    PairState,
    RankEngine,
    ReplayError,
    SubmitResult,
    Target,
    replay_events,
)
from .sim import (
    EvaluatorProfile,
    LatencySpec,
    PolicyComparison,
    SimReport,
    TruePreferenceModel,
    compare_policies,
    kendall_tau,
    run_simulation,
)
from .stats import (
    Accuracy,
    ComplexityBounds,
    InfeasibleBudgetError,
    PairTally,
    anytime_interval,
    binomial_test_one_sided,
    clopper_pearson,
    error_bias,
    hoeffding_interval,
    max_comparisons,
    plan_epsilon,
    sort_complexity_bounds,
)

__all__ = [
    "Accuracy",
    "ComplexityBounds",
    "ConfigError",
    "Determination",
    "EvaluationRequest",
    "EvaluatorProfile",
    "ExperimentConfig",
    "InfeasibleBudgetError",
    "LatencySpec",
    "POLICY_BALANCED",
    "POLICY_NAIVE",
    "PairState",
    "PairTally",
    "PolicyComparison",
    "RankEngine",
    "ReplayError",
    "SimReport",
    "SubmitResult",
    "Target",
    "TruePreferenceModel",
    "anytime_interval",
    "binomial_test_one_sided",
    "clopper_pearson",
    "compare_policies",
    "error_bias",
    "hoeffding_interval",
    "kendall_tau",
    "max_comparisons",
    "plan_epsilon",
    "replay_events",
    "run_simulation",
    "sort_complexity_bounds",
]

__version__ = "0.1.0"
