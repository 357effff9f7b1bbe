"""Risk-sensitive mean-field games on finite state and action spaces."""

from .model import MfgModel, ModelError, cost_at, kernel_at, lipschitz_constants, load_model
from .risk_dp import (
    MarkovPolicy,
    MeasureFlow,
    StateActionFlow,
    ValueTable,
    bellman_step,
    evaluate_policy,
    finite_horizon_values,
    greedy_policy,
    truncation_horizon,
    verify_optimality,
)
from .mfe import MfeResult, gamma_step, lambda_map, mfe_residual, solve_mfe
from .augmented import augmented_evaluate, augmented_flow
from .duality import entropy_dual_check, isaacs_values
from .simulator import (
    SimConfig,
    SimReport,
    convergence_study,
    joint_dp_oracle,
    nash_gap,
    simulate,
)

__version__ = "0.1.0"

__all__ = [
    "MarkovPolicy", "MeasureFlow", "MfeResult", "MfgModel", "ModelError", "SimConfig",
    "SimReport", "StateActionFlow", "ValueTable", "augmented_evaluate", "augmented_flow",
    "bellman_step", "convergence_study", "cost_at", "entropy_dual_check",
    "evaluate_policy", "finite_horizon_values", "gamma_step", "greedy_policy",
    "isaacs_values", "joint_dp_oracle", "kernel_at", "lambda_map", "lipschitz_constants",
    "load_model", "mfe_residual", "nash_gap", "simulate", "solve_mfe",
    "truncation_horizon", "verify_optimality",
]
