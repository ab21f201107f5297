"""Functional principal components for sparse longitudinal trajectories.

Fit a PACE-style FPCA model, test groups for equal mean and correlation
functions by permutation, and compare one full-cohort model with
group-specific models by cross-validation.
"""

__version__ = "0.1.0"

from .curves import CurveMatrix, LongitudinalSample, TimeGrid, build_grid, inner, nearest_grid_index, norm_sq
from .evaluate import (
    FoldAssignment,
    FutureAccuracy,
    GofResult,
    acse,
    future_prediction_rmse,
    gof_compare,
    root_macse,
    stratified_folds,
)
from .inference import (
    PermutationTestResult,
    StandardizedCurves,
    covariance_permutation_test,
    fp_statistic,
    mean_permutation_test,
    sqrt_distance,
    standardize_trajectories,
)
from .io import ingest_csv, write_cohort_csv
from .pace import FitConfig, FpcaModel, estimate_scores, fit, fitted_trajectory, predict_trajectory
from .simulate import KlSpec, default_spec, legendre_basis, simulate_cohort, simulate_groups
from .smooth import Bandwidth, local_linear_1d, local_linear_2d

__all__ = [
    "Bandwidth",
    "CurveMatrix",
    "FitConfig",
    "FoldAssignment",
    "FpcaModel",
    "FutureAccuracy",
    "GofResult",
    "KlSpec",
    "LongitudinalSample",
    "PermutationTestResult",
    "StandardizedCurves",
    "TimeGrid",
    "acse",
    "build_grid",
    "covariance_permutation_test",
    "default_spec",
    "estimate_scores",
    "fit",
    "fitted_trajectory",
    "fp_statistic",
    "future_prediction_rmse",
    "gof_compare",
    "ingest_csv",
    "inner",
    "legendre_basis",
    "local_linear_1d",
    "local_linear_2d",
    "mean_permutation_test",
    "nearest_grid_index",
    "norm_sq",
    "predict_trajectory",
    "root_macse",
    "simulate_cohort",
    "simulate_groups",
    "sqrt_distance",
    "standardize_trajectories",
    "stratified_folds",
    "write_cohort_csv",
]
