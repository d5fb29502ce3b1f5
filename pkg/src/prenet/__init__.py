"""Penalized maximum-likelihood factor analysis with the prenet penalty."""

from .model import (
    Family,
    FactorParams,
    PenaltySpec,
    SampleCovariance,
    discrepancy_loss,
    penalized_objective,
    penalty_value,
    quadratic_loss,
    sample_covariance,
    sigma_from_params,
)
from .solver import (
    FitConfig,
    FitResult,
    Init,
    SolutionPath,
    e_step,
    fit,
    pss_fit,
    rho_max,
    solution_path,
)
from .selection import criteria, count_nonzero, select_along_path

__version__ = "0.1.0"

__all__ = [
    "Family",
    "FactorParams",
    "PenaltySpec",
    "SampleCovariance",
    "discrepancy_loss",
    "penalized_objective",
    "penalty_value",
    "quadratic_loss",
    "sample_covariance",
    "sigma_from_params",
    "FitConfig",
    "FitResult",
    "Init",
    "SolutionPath",
    "e_step",
    "fit",
    "pss_fit",
    "rho_max",
    "solution_path",
    "criteria",
    "count_nonzero",
    "select_along_path",
]
