"""Fast penalized-spline covariance estimation for sparse functional data.

The library smooths raw covariance products with a symmetric tensor-product
spline, estimates the noise variance jointly, selects the smoothing
parameter by a fast leave-one-subject-out criterion, and provides
eigen-analysis and subject-level curve prediction on top of the fit.
"""

__version__ = "0.1.0"

from .dataset import (
    SparseFunctionalDataset,
    SubjectRecord,
    from_rows,
    load_csv,
    rescale_time,
)
from .estimator import FunctionalCovarianceSmoother
from .predict import PredictionResult, confidence_bands, predict_subject
from .sim import SimConfig, gen_case1, gen_case2, run_study
from .solver import FitResult, MeanFit, fit_mean_pspline, fit_two_step
from .spectral import EigenResult, eigendecompose, eval_cov_grid
from .splines import SplineBasis, basis_from_knots, make_basis

__all__ = [
    "__version__",
    "SparseFunctionalDataset",
    "SubjectRecord",
    "from_rows",
    "load_csv",
    "rescale_time",
    "FunctionalCovarianceSmoother",
    "PredictionResult",
    "confidence_bands",
    "predict_subject",
    "SimConfig",
    "gen_case1",
    "gen_case2",
    "run_study",
    "FitResult",
    "MeanFit",
    "fit_mean_pspline",
    "fit_two_step",
    "EigenResult",
    "eigendecompose",
    "eval_cov_grid",
    "SplineBasis",
    "basis_from_knots",
    "make_basis",
]
