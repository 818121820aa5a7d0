"""Covariance of raw products under a working Gaussian model, and blended weights.

Generalized least squares needs Cov(C_hat_i). Under joint normality it has a
closed form in the working covariance C and noise variance sigma2; blending
that matrix toward its own diagonal keeps it invertible.
"""

from __future__ import annotations

import warnings

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .oracle import _cov_matrix

__all__ = ["covariance_of_products", "blend_weights"]

DEFAULT_BETA = 0.05


def covariance_of_products(cov, sigma2, times) -> np.ndarray:
    """Cov(C_hat_i) for one subject from the Gaussian fourth-moment identity.

    Parameters
    ----------
    cov : callable or ndarray
        Working covariance, either an evaluator C(s, t) accepting arrays or a
        precomputed m x m matrix on `times`.
    sigma2 : float
        Working noise variance, >= 0.
    times : array_like
        The subject's m observation times.

    Returns
    -------
    numpy.ndarray
        The n_i x n_i matrix over product pairs in stacking order, n_i =
        m(m+1)/2. For products (j, j') and (k, k'),

        Cov = C_jk C_j'k' + C_jk' C_j'k
              + (d_jk d_j'k' + d_jk' d_j'k) sigma2^2
              + (C_jk d_j'k' + C_jk' d_j'k + C_j'k d_jk' + C_j'k' d_jk) sigma2

        where d compares observation indices, not times: tied times at
        different indices carry independent noise.

    Notes
    -----
    The expression tree is identical for entries (a, b) and (b, a), so the
    output is symmetric to the bit.
    """
    if sigma2 < 0:
        raise ValueError("sigma2 must be nonnegative")
    t = np.asarray(times, dtype=float).ravel()
    Cm = _cov_matrix(cov, t)
    j1, j2 = np.triu_indices(t.size)
    J, JP = j1[:, None], j2[:, None]
    K, KP = j1[None, :], j2[None, :]
    s2 = float(sigma2)
    s4 = s2 * s2
    Cjk, Cjkp = Cm[J, K], Cm[J, KP]
    Cjpk, Cjpkp = Cm[JP, K], Cm[JP, KP]
    djk = (J == K).astype(float)
    djkp = (J == KP).astype(float)
    djpk = (JP == K).astype(float)
    djpkp = (JP == KP).astype(float)
    return (
        Cjk * Cjpkp
        + Cjkp * Cjpk
        + (djk * djpkp + djkp * djpk) * s4
        + (Cjk * djpkp + Cjkp * djpk + Cjpk * djkp + Cjpkp * djk) * s2
    )


def blend_weights(cov_Ci, beta: float = DEFAULT_BETA) -> np.ndarray:
    """Invert the diagonally blended covariance.

    W_i = [(1-beta) Cov + beta diag(Cov)]^{-1} via a Cholesky solve. A
    working covariance that is not positive definite can make the blend
    numerically indefinite; in that case beta is doubled (toward 1, where
    the blend is the bare positive diagonal) until the factorization
    succeeds.
    """
    A = np.asarray(cov_Ci, dtype=float)
    d = np.diag(A).copy()
    if np.any(d <= 0):
        raise ValueError(
            "product covariance has a non-positive diagonal entry; both the "
            "working noise variance and the fitted diagonal are zero"
        )
    if not 0.0 < beta <= 1.0:
        raise ValueError("beta must be in (0, 1]")
    b = float(beta)
    while True:
        blended = (1.0 - b) * A + b * np.diag(d)
        try:
            factor = cho_factor(blended, lower=True)
            break
        except (LinAlgError, np.linalg.LinAlgError):
            if b >= 1.0:
                raise
            b = min(1.0, 2.0 * b)
            warnings.warn(
                f"blended product covariance was not positive definite; "
                f"retrying with beta={b:g}",
                RuntimeWarning,
                stacklevel=2,
            )
    W = cho_solve(factor, np.eye(d.size))
    return 0.5 * (W + W.T)
