"""Scikit-learn style wrapper around the two-step covariance fit.

The estimator accepts either a dataset object or plain (subject_id, time,
value) triples, maps times onto [0, 1] internally, and reports every result
(covariance grid, eigenpairs, predictions) back in the original time units.
"""

from __future__ import annotations

import dataclasses

import numpy as np
from sklearn.base import BaseEstimator

from .dataset import SparseFunctionalDataset, from_rows, rescale_time
from .predict import confidence_bands, predict_subject
from .solver import fit_two_step
from .spectral import eigendecompose, eval_cov_grid

__all__ = ["FunctionalCovarianceSmoother"]


class FunctionalCovarianceSmoother(BaseEstimator):
    """Penalized tensor-spline covariance smoother for sparse curves.

    Parameters
    ----------
    n_interior : int
        Interior knots per axis of the tensor-product basis.
    order : int
        Spline order (4 = cubic).
    beta : float
        Diagonal blending weight stabilizing the step-2 weight matrices.
    lambda_min, lambda_max, n_lambda : float, float, int
        Geometric grid searched by the leave-one-subject-out criterion.
    grid_size : int
        Default evaluation grid for `covariance` and `eigen`.
    use_exact_icv : bool
        Select lambda by the exact leave-one-subject-out criterion instead
        of its fast approximation (small problems only).
    rescale : bool
        Map observed times affinely onto [0, 1] before fitting. With False
        the input times must already lie in [0, 1].

    Attributes
    ----------
    fit_result_ : FitResult
    dataset_ : SparseFunctionalDataset
        The (possibly rescaled) data the model was fit on.
    theta_ : ndarray of shape (c, c)
        Symmetric basis-coefficient matrix.
    sigma2_ : float
        Noise variance estimate (clamped at zero).
    lambdas_ : tuple of float
        Smoothing parameter chosen in each of the two steps.
    """

    def __init__(self, *, n_interior: int = 10, order: int = 4,
                 beta: float = 0.05, lambda_min: float = 1e-6,
                 lambda_max: float = 1e6, n_lambda: int = 100,
                 grid_size: int = 101, use_exact_icv: bool = False,
                 rescale: bool = True):
        self.n_interior = n_interior
        self.order = order
        self.beta = beta
        self.lambda_min = lambda_min
        self.lambda_max = lambda_max
        self.n_lambda = n_lambda
        self.grid_size = grid_size
        self.use_exact_icv = use_exact_icv
        self.rescale = rescale

    def _as_dataset(self, X) -> SparseFunctionalDataset:
        if isinstance(X, SparseFunctionalDataset):
            return X
        return from_rows(X)

    def fit(self, X, y=None):
        """Fit the covariance surface.

        X is a dataset or an (N, 3) array-like of (subject_id, time, value)
        rows; y is ignored and accepted for interface compatibility.
        """
        ds = self._as_dataset(X)
        if self.rescale:
            ds = rescale_time(ds)
        grid = np.geomspace(self.lambda_min, self.lambda_max, self.n_lambda)
        self.fit_result_ = fit_two_step(
            ds,
            n_interior=self.n_interior,
            order=self.order,
            beta=self.beta,
            lambda_grid=grid,
            use_exact_icv=self.use_exact_icv,
        )
        self.dataset_ = ds
        self.theta_ = self.fit_result_.Theta_hat
        self.sigma2_ = self.fit_result_.sigma2_hat
        self.lambdas_ = self.fit_result_.lambdas
        self.basis_ = self.fit_result_.basis
        self.mean_fit_ = self.fit_result_.mean_fit
        return self

    def _check_fitted(self):
        if not hasattr(self, "fit_result_"):
            raise RuntimeError("estimator is not fitted; call fit first")

    def _default_grid(self):
        return np.linspace(0.0, 1.0, self.grid_size)

    def mean(self, times=None):
        """Fitted mean at original-unit times (default: the evaluation grid)."""
        self._check_fitted()
        u = self._default_grid() if times is None else self.dataset_.to_unit(times)
        values = self.mean_fit_.evaluate(u)
        return self.dataset_.to_original(u), values

    def covariance(self, times=None):
        """Fitted covariance at original-unit times; returns (times, matrix)."""
        self._check_fitted()
        u = self._default_grid() if times is None else self.dataset_.to_unit(times)
        C = eval_cov_grid(self.fit_result_, u)
        return self.dataset_.to_original(u), C

    def eigen(self, k=None, grid_size=None):
        """Leading eigenpairs of the fitted surface in original units.

        Eigenvalues scale with the length of the time domain and the
        eigenfunctions are orthonormal on it. Returns (times, eigenvalues,
        eigenfunctions) with at most k components.
        """
        self._check_fitted()
        G = self.grid_size if grid_size is None else int(grid_size)
        u = np.linspace(0.0, 1.0, G)
        res = eigendecompose(eval_cov_grid(self.fit_result_, u), u)
        lo, hi = self.dataset_.time_domain
        span = hi - lo if hi > lo else 1.0
        values = res.eigenvalues * span
        functions = res.eigenfunctions / np.sqrt(span)
        if k is not None:
            values = values[:k]
            functions = functions[:, :k]
        return self.dataset_.to_original(u), values, functions

    def predict_subject(self, subject_id, new_times, level=None, latent=False):
        """Best linear prediction of one subject's curve at original-unit times.

        With `level` set, Gaussian pointwise bands are attached. Returns a
        PredictionResult whose times are in original units.
        """
        self._check_fitted()
        record = self.dataset_.subject(str(subject_id))
        u = np.atleast_1d(self.dataset_.to_unit(new_times))
        pred = predict_subject(self.fit_result_, record, u, latent=latent)
        if level is not None:
            pred = confidence_bands(pred, level)
        return dataclasses.replace(pred, new_times=self.dataset_.to_original(u))
