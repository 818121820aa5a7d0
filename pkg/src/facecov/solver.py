"""Closed-form penalized weighted least squares and the two-step fit.

The coefficient vector alpha = (vech Theta, sigma2) solves

    alpha(lam) = (X'WX + ridge I + lam Q)^{-1} X'W C_hat.

Diagonalizing once per weighting makes the whole lambda grid cheap: with
A'(X'WX + ridge I)A = I and A'QA = diag(s), the solution is
alpha = A (d o f~) with d = 1/(1 + lam s). The two-step procedure runs this
under unit weights, builds moment-based weights from that fit, and runs it
once more.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular

from . import gcv
from .design import build_design
from .splines import (
    SplineBasis,
    difference_matrix,
    eval_basis_matrix,
    make_basis,
    penalty_matrices,
    unvech,
)
from .weights import DEFAULT_BETA, blend_weights, covariance_of_products

__all__ = [
    "Diagonalization",
    "MeanFit",
    "FitResult",
    "default_ridge",
    "fit_pwls",
    "diagonalize",
    "fit_mean_pspline",
    "fit_two_step",
]

RIDGE_REL = 1e-8
RIDGE_REL_MAX = 1e-4
EXACT_ICV_MAX_ROWS = 5000


@dataclass(frozen=True)
class Diagonalization:
    """Simultaneous reduction of the normal matrix and the penalty.

    A'(X'WX + ridge I)A = I and A'QA = diag(s) with s sorted descending and
    nonnegative. Neither A nor s depends on lambda. F = X A and its
    per-subject blocks are attached when design blocks are supplied.
    """

    A: np.ndarray
    s: np.ndarray
    ridge: float
    F: np.ndarray | None = None
    F_blocks: list | None = None


@dataclass(frozen=True)
class MeanFit:
    """Univariate penalized B-spline mean, evaluable on [0, 1]."""

    basis: SplineBasis
    coef: np.ndarray
    lam: float

    def evaluate(self, times) -> np.ndarray:
        return eval_basis_matrix(self.basis, times) @ self.coef

    __call__ = evaluate


@dataclass
class FitResult:
    """Fitted covariance surface coefficients and noise variance.

    theta_vech stores vech(Theta_hat), so the expanded matrix is symmetric
    exactly. lambdas records the smoothing parameter chosen in each step.
    """

    theta_vech: np.ndarray
    sigma2_hat: float
    lambdas: tuple
    basis: SplineBasis
    mean_fit: MeanFit
    diagnostics: dict = field(default_factory=dict)

    @property
    def Theta_hat(self) -> np.ndarray:
        return unvech(self.theta_vech, self.basis.c)


def default_ridge(M) -> float:
    """Ridge used before factorizing a normal matrix: 1e-8 tr(M)/p."""
    M = np.asarray(M)
    return RIDGE_REL * float(np.trace(M)) / M.shape[0]


def _ridged_cholesky(M: np.ndarray, tr: float):
    # Sparse designs can leave basis tails unsupported, so the bare normal
    # matrix may be singular; escalate the ridge tenfold up to 1e-4 relative.
    p = M.shape[0]
    rel = RIDGE_REL
    while rel <= RIDGE_REL_MAX:
        eps = rel * tr / p
        try:
            return np.linalg.cholesky(M + eps * np.eye(p)), eps
        except np.linalg.LinAlgError:
            rel *= 10.0
    raise ValueError(
        "normal matrix is numerically singular even after ridging; "
        "reduce the number of knots"
    )


def _accumulate_gram(X_blocks, W_blocks=None):
    p = X_blocks[0].shape[1]
    XtWX = np.zeros((p, p))
    for i, Xi in enumerate(X_blocks):
        XtWX += Xi.T @ Xi if W_blocks is None else Xi.T @ (W_blocks[i] @ Xi)
    return XtWX


def fit_pwls(X, W, C_hat, Q, lam: float, ridge="auto") -> np.ndarray:
    """One-shot penalized weighted least squares on the stacked design.

    W may be None (identity) or a dense N x N matrix. ridge="auto" applies
    the default policy relative to trace(X'WX); pass an explicit float to
    override. Never forms anything N x N beyond the given W.
    """
    X = np.asarray(X, dtype=float)
    C_hat = np.asarray(C_hat, dtype=float).ravel()
    if lam < 0:
        raise ValueError("lambda must be nonnegative")
    if W is None:
        XtWX = X.T @ X
        XtWC = X.T @ C_hat
    else:
        W = np.asarray(W, dtype=float)
        XtWX = X.T @ W @ X
        XtWC = X.T @ (W @ C_hat)
    tr = float(np.trace(XtWX)) if ridge == "auto" else None
    M = XtWX + lam * np.asarray(Q, dtype=float)
    if ridge == "auto":
        L, _ = _ridged_cholesky(M, tr)
    else:
        eps = float(ridge)
        try:
            L = np.linalg.cholesky(M + eps * np.eye(M.shape[0]))
        except np.linalg.LinAlgError as exc:
            raise ValueError("penalized system is singular at the given ridge") from exc
    z = solve_triangular(L, XtWC, lower=True)
    return solve_triangular(L, z, lower=True, trans="T")


def diagonalize(XtWX, Q, X_blocks=None, ridge="auto") -> Diagonalization:
    """Whiten the ridged normal matrix and diagonalize the penalty in it.

    Cholesky X'WX + ridge I = L L', eigendecompose L^{-1} Q L^{-T} =
    U diag(s) U', and set A = L^{-T} U. ridge="auto" applies the default
    policy; an explicit float overrides it. The generalized eigenvalues s
    are clamped: values within 1e-12 relative of zero are structural null
    directions of Q (polynomial surface components and the noise
    coordinate) that eigh reports as +-1e-15-ish noise; carried into
    d = 1/(1 + lam s) at large lam that noise would dominate the value.
    """
    M = np.asarray(XtWX, dtype=float)
    Q = np.asarray(Q, dtype=float)
    p = M.shape[0]
    if ridge == "auto":
        L, eps = _ridged_cholesky(M, float(np.trace(M)))
    else:
        eps = float(ridge)
        try:
            L = np.linalg.cholesky(M + eps * np.eye(p))
        except np.linalg.LinAlgError as exc:
            raise ValueError("normal matrix is singular at the given ridge") from exc
    Y = solve_triangular(L, Q, lower=True)
    B = solve_triangular(L, Y.T, lower=True).T
    B = 0.5 * (B + B.T)
    w, V = np.linalg.eigh(B)
    order = np.argsort(-w, kind="stable")
    s = w[order]
    U = V[:, order]
    smax = float(s[0]) if s.size else 0.0
    if smax > 0.0:
        if float(s.min()) < -1e-10 * max(smax, 1.0):
            raise ValueError("penalty projection produced a significantly negative eigenvalue")
        s = np.where(np.abs(s) < 1e-12 * smax, 0.0, s)
    s = np.maximum(s, 0.0)
    A = solve_triangular(L, U, lower=True, trans="T")
    F = None
    F_blocks = None
    if X_blocks is not None:
        F_blocks = [Xi @ A for Xi in X_blocks]
        F = np.vstack(F_blocks)
    return Diagonalization(A=A, s=s, ridge=eps, F=F, F_blocks=F_blocks)


def _select(diag, X_blocks, C_blocks, W_blocks, Q, grid, use_exact_icv):
    pre = gcv.precompute(diag, C_blocks, W_blocks)
    if use_exact_icv:
        N = sum(Ci.size for Ci in C_blocks)
        if N > EXACT_ICV_MAX_ROWS:
            raise ValueError(
                f"exact leave-one-out selection is limited to {EXACT_ICV_MAX_ROWS} rows"
            )
        grid = gcv.default_lambda_grid() if grid is None else np.asarray(grid, dtype=float)
        values = np.array([
            gcv.exact_icv(X_blocks, C_blocks, Q, lam, W_blocks, ridge=diag.ridge)
            for lam in grid
        ])
        k = int(np.argmin(values))
        if k in (0, len(grid) - 1):
            warnings.warn(
                f"selected lambda {grid[k]:g} lies on the grid boundary",
                RuntimeWarning,
                stacklevel=2,
            )
        lam = float(grid[k])
    else:
        lam, values = gcv.select_lambda(pre, diag.s, grid)
    d = 1.0 / (1.0 + lam * diag.s)
    alpha = diag.A @ (d * pre.f_tilde)
    return alpha, lam, values


def fit_mean_pspline(ds, n_interior: int = 10, order: int = 4,
                     lambda_grid=None) -> MeanFit:
    """Univariate P-spline regression of the values on time.

    Same quantile knot rule and second-difference penalty as the surface
    fit; the smoothing parameter comes from the same leave-one-subject-out
    machinery with subject-grouped rows and unit weights. The knot count is
    reduced automatically when the data have too few distinct times.
    """
    t_all = ds.all_times()
    n_distinct = np.unique(t_all).size
    k = min(n_interior, max(1, n_distinct - 1))
    if k < n_interior:
        warnings.warn(
            f"only {n_distinct} distinct times; mean fit uses {k} interior knots",
            RuntimeWarning,
            stacklevel=2,
        )
    basis = make_basis(t_all, n_interior=k, order=order)
    D = difference_matrix(basis.c)
    Q = D @ D.T
    X_blocks = [eval_basis_matrix(basis, s.times) for s in ds.subjects]
    C_blocks = [s.values for s in ds.subjects]
    diag = diagonalize(_accumulate_gram(X_blocks), Q, X_blocks)
    pre = gcv.precompute(diag, C_blocks)
    lam, _ = gcv.select_lambda(pre, diag.s, lambda_grid)
    d = 1.0 / (1.0 + lam * diag.s)
    coef = diag.A @ (d * pre.f_tilde)
    return MeanFit(basis=basis, coef=coef, lam=lam)


def fit_two_step(ds, basis=None, *, n_interior: int = 10, order: int = 4,
                 beta: float = DEFAULT_BETA, lambda_grid=None,
                 mean_n_interior: int | None = None,
                 use_exact_icv: bool = False) -> FitResult:
    """Two-step covariance fit: unit-weight selection, then one reweighted pass.

    Step 0 fits the mean and forms residual products. Step 1 selects lambda
    under unit weights and yields a working (Theta, sigma2). Step 2 builds
    per-subject weights from the working fit via the Gaussian fourth-moment
    formula, re-diagonalizes, re-selects lambda, and solves once more.
    Exactly two steps; lambda is re-selected because the weights change the
    scale of the problem.

    Requires times in [0, 1] and at least one subject with two or more
    observations; the reported sigma2 is clamped at zero with a warning if
    the unconstrained estimate is negative.
    """
    counts = ds.counts
    if not np.any(counts >= 2):
        raise ValueError(
            "covariance is unidentifiable: every subject has a single observation"
        )
    t_all = ds.all_times()
    if t_all.min() < 0.0 or t_all.max() > 1.0:
        raise ValueError("times must lie in [0, 1]; apply rescale_time first")

    mean_fit = fit_mean_pspline(
        ds, n_interior=mean_n_interior if mean_n_interior is not None else n_interior,
        order=order, lambda_grid=lambda_grid,
    )
    if basis is None:
        basis = make_basis(t_all, n_interior=n_interior, order=order)
    Q = penalty_matrices(basis.c).Q
    q = basis.c * (basis.c + 1) // 2

    blocks, _, _ = build_design(ds, basis, mean_fn=mean_fit.evaluate)
    X_blocks = [b.X for b in blocks]
    C_blocks = [b.C_hat for b in blocks]

    # step 1: unit weights
    diag1 = diagonalize(_accumulate_gram(X_blocks), Q, X_blocks)
    alpha0, lam1, curve1 = _select(diag1, X_blocks, C_blocks, None, Q,
                                   lambda_grid, use_exact_icv)
    Theta0 = unvech(alpha0[:q], basis.c)
    # the Gaussian moment model behind the weights needs a valid working
    # surface; an indefinite step-1 estimate is projected onto the PSD cone
    w0, V0 = np.linalg.eigh(Theta0)
    if float(w0.min()) < 0.0:
        Theta0 = (V0 * np.maximum(w0, 0.0)) @ V0.T

    # the unconstrained noise estimate can be negative; the weight formula
    # needs a positive working value
    residuals = np.concatenate([s.values - mean_fit.evaluate(s.times) for s in ds.subjects])
    sigma2_work = max(float(alpha0[q]), 1e-6 * float(np.var(residuals)))

    # step 2: moment-based weights from the working fit
    W_blocks = []
    for s in ds.subjects:
        B = eval_basis_matrix(basis, s.times)
        Cm = B @ Theta0 @ B.T
        cov_i = covariance_of_products(Cm, sigma2_work, s.times)
        W_blocks.append(blend_weights(cov_i, beta))
    diag2 = diagonalize(_accumulate_gram(X_blocks, W_blocks), Q, X_blocks)
    alpha, lam2, curve2 = _select(diag2, X_blocks, C_blocks, W_blocks, Q,
                                  lambda_grid, use_exact_icv)

    sigma2_raw = float(alpha[q])
    sigma2 = sigma2_raw
    if sigma2 < 0.0:
        warnings.warn(
            f"noise variance estimate {sigma2_raw:.3g} was negative; clamped to 0",
            RuntimeWarning,
            stacklevel=2,
        )
        sigma2 = 0.0
    return FitResult(
        theta_vech=alpha[:q],
        sigma2_hat=sigma2,
        lambdas=(lam1, lam2),
        basis=basis,
        mean_fit=mean_fit,
        diagnostics={
            "sigma2_raw": sigma2_raw,
            "sigma2_working": sigma2_work,
            "ridge": (diag1.ridge, diag2.ridge),
            "igcv_step1": curve1,
            "igcv_step2": curve2,
            "steps": 2,
            "selection": "exact_icv" if use_exact_icv else "igcv",
        },
    )
