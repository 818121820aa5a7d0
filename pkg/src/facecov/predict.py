"""Conditional-Gaussian prediction of subject curves at new time points.

Under joint normality the subject's curve at new times, given its noisy
observations, has the usual partitioned-Gaussian conditional mean and
covariance; the fitted (Theta, sigma2, mean) plug in for the unknowns.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve
from scipy.special import ndtri

from .splines import eval_basis_matrix

__all__ = ["PredictionResult", "predict_subject", "confidence_bands"]


@dataclass(frozen=True)
class PredictionResult:
    """Conditional means, plug-in covariance, and optional pointwise bands."""

    new_times: np.ndarray
    x_hat: np.ndarray
    cov: np.ndarray
    level: float | None = None
    band_lo: np.ndarray | None = None
    band_hi: np.ndarray | None = None


def predict_subject(fit, record, new_times, latent: bool = False) -> PredictionResult:
    """Predict one subject's curve at new times from its own observations.

    x_hat = H_n Theta H_o' V^{-1} (y - f_o) + f_n with
    V = H_o Theta H_o' + sigma2 I, and

    cov = V_n - H_n Theta H_o' V^{-1} (H_n Theta H_o')'

    where V_n = H_n Theta H_n' + sigma2 I. `latent=True` drops the sigma2
    term from V_n, so the bands cover the noise-free curve instead of new
    noisy observations.

    Theta need not be positive semidefinite; V is repaired by diagonal
    inflation when its smallest eigenvalue falls below 1e-8 tr(V)/m.
    """
    new_times = np.atleast_1d(np.asarray(new_times, dtype=float))
    if new_times.size and (new_times.min() < 0.0 or new_times.max() > 1.0):
        raise ValueError("new times must lie in [0, 1]")
    theta = fit.Theta_hat
    sigma2 = float(fit.sigma2_hat)
    H_o = eval_basis_matrix(fit.basis, record.times)
    H_n = eval_basis_matrix(fit.basis, new_times)
    f_o = fit.mean_fit.evaluate(record.times)
    f_n = fit.mean_fit.evaluate(new_times)
    m = record.m

    V = H_o @ theta @ H_o.T + sigma2 * np.eye(m)
    V = 0.5 * (V + V.T)
    min_eig = float(np.linalg.eigvalsh(V).min()) if m else 0.0
    eps = 1e-8 * float(np.trace(V)) / max(m, 1)
    if min_eig < eps:
        V = V + (eps - min_eig) * np.eye(m)
    K = H_n @ theta @ H_o.T
    try:
        factor = cho_factor(V, lower=True)
    except (LinAlgError, np.linalg.LinAlgError) as exc:
        raise ValueError("observation covariance is singular even after repair") from exc
    x_hat = K @ cho_solve(factor, record.values - f_o) + f_n
    V_n = H_n @ theta @ H_n.T + (0.0 if latent else sigma2) * np.eye(new_times.size)
    cov = V_n - K @ cho_solve(factor, K.T)
    return PredictionResult(new_times=new_times, x_hat=x_hat, cov=0.5 * (cov + cov.T))


def confidence_bands(pred: PredictionResult, level: float = 0.95) -> PredictionResult:
    """Pointwise normal intervals x_hat +- z_{(1+level)/2} sqrt(diag(cov))."""
    if not 0.0 < level < 1.0:
        raise ValueError("level must be strictly between 0 and 1")
    z = float(ndtri((1.0 + level) / 2.0))
    half = z * np.sqrt(np.clip(np.diag(pred.cov), 0.0, None))
    return replace(pred, level=level, band_lo=pred.x_hat - half, band_hi=pred.x_hat + half)
