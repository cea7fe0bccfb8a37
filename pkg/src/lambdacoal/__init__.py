"""Exact rates, moments, limit laws and simulation for Lambda-coalescents with
a Beta(2-alpha, alpha)-type singularity at 0."""

from .asymptotics import (
    LimitLaw,
    beta_constants,
    cdf_fT,
    delta_alpha,
    extrapolate_limit,
    fit_convergence_slope,
    limit_law,
    limit_moment,
    theorem_prediction,
)
from .measure import CoalescentMeasure, beta_measure, general_measure, measure_from_config
from .moments import MomentTable, solve_moments
from .rates import RateTable, lambda_rate, total_rate
from .simulator import run_experiment, simulate_tree
from .specfun import ConvergenceError, DomainError

__version__ = "0.1.0"

__all__ = [
    "CoalescentMeasure",
    "ConvergenceError",
    "DomainError",
    "LimitLaw",
    "MomentTable",
    "RateTable",
    "beta_constants",
    "beta_measure",
    "cdf_fT",
    "delta_alpha",
    "extrapolate_limit",
    "fit_convergence_slope",
    "general_measure",
    "lambda_rate",
    "limit_law",
    "limit_moment",
    "measure_from_config",
    "run_experiment",
    "simulate_tree",
    "solve_moments",
    "theorem_prediction",
    "total_rate",
]
