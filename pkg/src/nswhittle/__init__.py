"""Optimistic index policies for restless bandits with drifting transition kernels."""

from .core import RmabConfig, RmabError, VariationBudget, l1_distance, validate_kernel, variation_budget
from .dual import select_actions, solve_dual, whittle_indices
from .env import EnvironmentSchedule, JointState, generate_environment, step
from .estimator import SlidingWindowStats, build_confidence_arrays, confidence_radius
from .evi import EviStop, inner_maximize, run_evi
from .harness import ExperimentConfig, run_experiment, tune_parameters
from .oracle import evaluate_policy_value, solve_oracle

__all__ = [
    "EnvironmentSchedule",
    "EviStop",
    "ExperimentConfig",
    "JointState",
    "RmabConfig",
    "RmabError",
    "SlidingWindowStats",
    "VariationBudget",
    "build_confidence_arrays",
    "confidence_radius",
    "evaluate_policy_value",
    "generate_environment",
    "inner_maximize",
    "l1_distance",
    "run_evi",
    "run_experiment",
    "select_actions",
    "solve_dual",
    "solve_oracle",
    "step",
    "tune_parameters",
    "validate_kernel",
    "variation_budget",
]
