"""Residual importance weighted transfer learning for sparse linear regression."""

from riwtl.core import (
    CoefVector,
    Dataset,
    DimensionError,
    FitResult,
    SelectionRecord,
    TransferProblem,
    TruthSpec,
    contrast,
    residuals,
)
from riwtl.density import (
    DensityModel,
    gaussian_fit,
    kde_fit,
    symmetrize,
    truncated_first_moment,
)
from riwtl.solvers import (
    ConvergenceError,
    DegenerateProblemError,
    SolverOptions,
    WeightedProblem,
    fit_scad,
    fit_weighted_lasso,
    lasso_path,
    soft_threshold,
)
from riwtl.transfer import (
    RiwConfig,
    fit_lasso_target,
    fit_oracle_riw_tl,
    fit_riw_tl,
    fit_riw_tl_u,
    fit_trans_lasso_oracle,
)
from riwtl.tuning import TuneGrid, cv_tune, lambda_max

__version__ = "0.1.0"

__all__ = [
    "CoefVector",
    "ConvergenceError",
    "Dataset",
    "DegenerateProblemError",
    "DensityModel",
    "DimensionError",
    "FitResult",
    "RiwConfig",
    "SelectionRecord",
    "SolverOptions",
    "TransferProblem",
    "TruthSpec",
    "TuneGrid",
    "WeightedProblem",
    "contrast",
    "cv_tune",
    "fit_lasso_target",
    "fit_oracle_riw_tl",
    "fit_riw_tl",
    "fit_riw_tl_u",
    "fit_scad",
    "fit_trans_lasso_oracle",
    "fit_weighted_lasso",
    "gaussian_fit",
    "kde_fit",
    "lambda_max",
    "lasso_path",
    "residuals",
    "soft_threshold",
    "symmetrize",
    "truncated_first_moment",
]
