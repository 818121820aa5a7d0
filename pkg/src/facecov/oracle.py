"""Slow, obviously-correct reference implementations for the test suite.

Everything here favors transparency over speed. The leave-one-subject-out
criteria are evaluated in exact rational arithmetic: float64 inputs convert
to Fractions without rounding, so the returned value is the true value of
the stated formula for the given data. A float evaluation of the same
formulas loses four to six digits once the penalty weight reaches 1e12
(the normal matrix condition number grows with lambda), which is not good
enough to referee an agreement check at 1e-8.

The module ships with the library so self-checks can run from the CLI.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from decimal import Decimal, localcontext
from fractions import Fraction

import numpy as np

__all__ = [
    "DenseProblem",
    "dense_smoother",
    "dense_igcv",
    "refit_icv",
    "isserlis_cov",
    "mc_cov_products",
    "mvn_condition",
    "normal_quantile",
    "bessel_k1_series",
]

_MAX_ROWS = 5000


@dataclass
class DenseProblem:
    """Stacked dense view of a penalized weighted least-squares problem.

    `ridge` is added to X'WX as ridge * I, mirroring whatever the fast
    solver used; comparisons are only meaningful when both sides solve the
    same regularized system.
    """

    X: np.ndarray
    W: np.ndarray
    Q: np.ndarray
    C_hat: np.ndarray
    boundaries: list
    ridge: float = 0.0

    def __post_init__(self):
        N, p = self.X.shape
        if N > _MAX_ROWS:
            raise ValueError(f"dense problems are limited to {_MAX_ROWS} rows")
        if self.W.shape != (N, N) or self.Q.shape != (p, p) or self.C_hat.shape != (N,):
            raise ValueError("inconsistent shapes in dense problem")
        if self.boundaries[-1][1] != N:
            raise ValueError("subject boundaries do not cover the rows")

    @classmethod
    def from_blocks(cls, X_blocks, C_blocks, Q, W_blocks=None, ridge=0.0):
        """Assemble the stacked problem from per-subject blocks."""
        X = np.vstack(X_blocks)
        C = np.concatenate(C_blocks)
        N = X.shape[0]
        W = np.zeros((N, N))
        boundaries = []
        start = 0
        for i, Xi in enumerate(X_blocks):
            stop = start + Xi.shape[0]
            if W_blocks is None:
                W[start:stop, start:stop] = np.eye(stop - start)
            else:
                W[start:stop, start:stop] = W_blocks[i]
            boundaries.append((start, stop))
            start = stop
        return cls(X=X, W=W, Q=np.asarray(Q, dtype=float), C_hat=C,
                   boundaries=boundaries, ridge=float(ridge))


def dense_smoother(problem: DenseProblem, lam: float):
    """Literal smoother S = X (X'WX + ridge I + lam Q)^{-1} X'W.

    Returns (S, S_rows, S_diag) where S_rows[i] is subject i's row slice of
    S and S_diag[i] the diagonal block S_ii.
    """
    p = problem.X.shape[1]
    G = problem.X.T @ problem.W @ problem.X + problem.ridge * np.eye(p) + lam * problem.Q
    S = problem.X @ np.linalg.solve(G, problem.X.T @ problem.W)
    S_rows = [S[a:b] for a, b in problem.boundaries]
    S_diag = [S[a:b, a:b] for a, b in problem.boundaries]
    return S, S_rows, S_diag


# ---------------------------------------------------------------------------
# exact rational linear algebra

def _frac_matrix(a):
    return [[Fraction(float(x)) for x in row] for row in np.asarray(a, dtype=float)]

def _frac_vector(a):
    return [Fraction(float(x)) for x in np.asarray(a, dtype=float).ravel()]


def _solve_exact(A, B):
    """Solve A X = B exactly; A is p x p and B is p x r, nested Fractions.

    Rows are scaled to integers, then eliminated fraction-free (Bareiss),
    which keeps intermediate entries determinant-sized instead of letting
    numerators and denominators explode the way naive Fraction elimination
    does. Back substitution returns Fractions.
    """
    p = len(A)
    r = len(B[0])
    w = p + r
    M = []
    for i in range(p):
        row = list(A[i]) + list(B[i])
        scale = math.lcm(*(f.denominator for f in row))
        M.append([f.numerator * (scale // f.denominator) for f in row])
    prev = 1
    for k in range(p - 1):
        piv = max(range(k, p), key=lambda i: abs(M[i][k]))
        if M[piv][k] == 0:
            raise ZeroDivisionError("singular system in exact solve")
        if piv != k:
            M[k], M[piv] = M[piv], M[k]
        pk = M[k][k]
        Mk = M[k]
        for i in range(k + 1, p):
            Mi = M[i]
            mik = Mi[k]
            for j in range(k + 1, w):
                Mi[j] = (Mi[j] * pk - mik * Mk[j]) // prev
            Mi[k] = 0
        prev = pk
    if M[p - 1][p - 1] == 0:
        raise ZeroDivisionError("singular system in exact solve")
    X = [[Fraction(0)] * r for _ in range(p)]
    for j in range(r):
        for i in range(p - 1, -1, -1):
            Mi = M[i]
            acc = Fraction(Mi[p + j])
            for k in range(i + 1, p):
                acc -= Mi[k] * X[k][j]
            X[i][j] = acc / Mi[i]
    return X


def _f_xtwx(X, W):
    """X' W X for one subject, exact."""
    n = len(X)
    p = len(X[0])
    WX = [[sum(W[i][k] * X[k][j] for k in range(n)) for j in range(p)] for i in range(n)]
    return [[sum(X[k][i] * WX[k][j] for k in range(n)) for j in range(p)] for i in range(p)]


def _f_xtwv(X, W, v):
    """X' W v for one subject, exact."""
    n = len(X)
    p = len(X[0])
    Wv = [sum(W[i][k] * v[k] for k in range(n)) for i in range(n)]
    return [sum(X[k][j] * Wv[k] for k in range(n)) for j in range(p)]


def _split_problem(problem: DenseProblem):
    Xb, Wb, Cb = [], [], []
    for a, b in problem.boundaries:
        Xb.append(_frac_matrix(problem.X[a:b]))
        Wb.append(_frac_matrix(problem.W[a:b, a:b]))
        Cb.append(_frac_vector(problem.C_hat[a:b]))
    return Xb, Wb, Cb


def _exact_gram(Xb, Wb, Q, lam, ridge, p):
    G = [[Fraction(0)] * p for _ in range(p)]
    for X, W in zip(Xb, Wb):
        A = _f_xtwx(X, W)
        for i in range(p):
            Gi = G[i]
            Ai = A[i]
            for j in range(p):
                Gi[j] += Ai[j]
    lamf = Fraction(float(lam))
    ridgef = Fraction(float(ridge))
    Qf = _frac_matrix(Q)
    for i in range(p):
        G[i][i] += ridgef
        for j in range(p):
            G[i][j] += lamf * Qf[i][j]
    return G


def dense_igcv(problem: DenseProblem, lam: float) -> float:
    """Leave-one-subject-out GCV surrogate, evaluated literally and exactly.

    iGCV(lam) = ||C - S C||^2 + 2 sum_i e_i' S_ii e_i with e_i = S_i C - C_i
    and S_ii = X_i G^{-1} X_i' W_i, G = X'WX + ridge I + lam Q. The quadratic
    forms contract through G^{-1}, so only (q+1)-sized solves are needed:
    e_i' S_ii e_i = (X_i' e_i)' G^{-1} (X_i' W_i e_i).
    """
    p = problem.X.shape[1]
    Xb, Wb, Cb = _split_problem(problem)
    G = _exact_gram(Xb, Wb, problem.Q, lam, problem.ridge, p)
    rhs = [[Fraction(0)] for _ in range(p)]
    for X, W, C in zip(Xb, Wb, Cb):
        v = _f_xtwv(X, W, C)
        for i in range(p):
            rhs[i][0] += v[i]
    beta = [row[0] for row in _solve_exact(G, rhs)]
    total = Fraction(0)
    U, V = [], []
    for X, W, C in zip(Xb, Wb, Cb):
        n = len(X)
        e = [sum(X[r][j] * beta[j] for j in range(p)) - C[r] for r in range(n)]
        total += sum(x * x for x in e)
        U.append(_f_xtwv(X, W, e))
        V.append([sum(X[r][j] * e[r] for r in range(n)) for j in range(p)])
    sols = _solve_exact(G, [[U[i][row] for i in range(len(U))] for row in range(p)])
    for i in range(len(U)):
        total += 2 * sum(V[i][j] * sols[j][i] for j in range(p))
    return float(total)


def refit_icv(problem: DenseProblem, lam: float) -> float:
    """Leave-one-subject-out error by literally refitting without each subject.

    The held-out fit keeps the same lambda and the same ridge; the ridge is
    part of the objective being cross-validated, not an afterthought.
    """
    p = problem.X.shape[1]
    Xb, Wb, Cb = _split_problem(problem)
    G = _exact_gram(Xb, Wb, problem.Q, lam, problem.ridge, p)
    rhs_all = [Fraction(0)] * p
    parts = []
    for X, W, C in zip(Xb, Wb, Cb):
        v = _f_xtwv(X, W, C)
        parts.append(v)
        for i in range(p):
            rhs_all[i] += v[i]
    total = Fraction(0)
    for idx, (X, W, C) in enumerate(zip(Xb, Wb, Cb)):
        A = _f_xtwx(X, W)
        G_minus = [[G[i][j] - A[i][j] for j in range(p)] for i in range(p)]
        rhs = [[rhs_all[i] - parts[idx][i]] for i in range(p)]
        try:
            beta = [row[0] for row in _solve_exact(G_minus, rhs)]
        except ZeroDivisionError as exc:
            raise ValueError(f"leave-out system is singular without subject {idx}") from exc
        for r in range(len(X)):
            err = C[r] - sum(X[r][j] * beta[j] for j in range(p))
            total += err * err
    return float(total)


# ---------------------------------------------------------------------------
# Gaussian moment references

def _cov_matrix(cov, times):
    t = np.asarray(times, dtype=float).ravel()
    if callable(cov):
        try:
            M = np.asarray(cov(t[:, None], t[None, :]), dtype=float)
        except TypeError:
            M = None
        if M is None or M.shape != (t.size, t.size):
            M = np.array([[float(cov(a, b)) for b in t] for a in t])
    else:
        M = np.asarray(cov, dtype=float)
        if M.shape != (t.size, t.size):
            raise ValueError("covariance matrix does not match the time vector")
    return 0.5 * (M + M.T)


def _pairing_sum(Sigma, idx):
    # sum over perfect matchings of products of pairwise covariances
    if not idx:
        return 1.0
    a = idx[0]
    total = 0.0
    for k in range(1, len(idx)):
        rest = idx[1:k] + idx[k + 1:]
        total += Sigma[a, idx[k]] * _pairing_sum(Sigma, rest)
    return total


def isserlis_cov(cov, sigma2, times) -> np.ndarray:
    """Covariance of residual products from the Gaussian pairing expansion.

    Builds Sigma = C + sigma2 I on the observed times, computes the fourth
    moment E[y_a y_b y_c y_d] by enumerating the three perfect matchings of
    the index multiset, and subtracts E[y_a y_b] E[y_c y_d]. Independent of
    any closed-form expansion of the same quantity.
    """
    t = np.asarray(times, dtype=float).ravel()
    Sigma = _cov_matrix(cov, t) + float(sigma2) * np.eye(t.size)
    j1, j2 = np.triu_indices(t.size)
    n = j1.size
    out = np.zeros((n, n))
    for a in range(n):
        for b in range(n):
            idx = [int(j1[a]), int(j2[a]), int(j1[b]), int(j2[b])]
            m4 = _pairing_sum(Sigma, idx)
            out[a, b] = m4 - Sigma[j1[a], j2[a]] * Sigma[j1[b], j2[b]]
    return out


def mc_cov_products(cov, sigma2, times, draws, rng, chunk=100_000):
    """Monte-Carlo covariance of residual products with entrywise errors.

    Returns (cov_hat, se) where se[a, b] estimates the standard error of
    cov_hat[a, b] from the empirical fourth moments. Draws come in chunks to
    bound temporary memory.
    """
    t = np.asarray(times, dtype=float).ravel()
    Sigma = _cov_matrix(cov, t) + float(sigma2) * np.eye(t.size)
    root = np.linalg.cholesky(Sigma + 1e-12 * np.trace(Sigma) / t.size * np.eye(t.size))
    j1, j2 = np.triu_indices(t.size)
    P = np.empty((draws, j1.size))
    done = 0
    while done < draws:
        b = min(chunk, draws - done)
        Y = rng.standard_normal((b, t.size)) @ root.T
        P[done:done + b] = Y[:, j1] * Y[:, j2]
        done += b
    D = P - P.mean(axis=0)
    cov_hat = (D.T @ D) / (draws - 1)
    se = np.empty_like(cov_hat)
    for a in range(j1.size):
        prod = D[:, a][:, None] * D
        se[a] = np.sqrt(np.maximum(prod.var(axis=0), 0.0) / draws)
    return cov_hat, se


def mvn_condition(joint_mean, joint_cov, obs_idx, y_obs):
    """Partitioned-Gaussian conditioning on the observed block.

    Returns (mean, cov, new_idx) for the complement block, with new_idx in
    ascending order.
    """
    mu = np.asarray(joint_mean, dtype=float).ravel()
    S = np.asarray(joint_cov, dtype=float)
    obs = np.asarray(obs_idx, dtype=int)
    new = np.setdiff1d(np.arange(mu.size), obs)
    S_oo = S[np.ix_(obs, obs)]
    S_no = S[np.ix_(new, obs)]
    S_nn = S[np.ix_(new, new)]
    sol = np.linalg.solve(S_oo, np.column_stack([np.asarray(y_obs, float) - mu[obs], S_no.T]))
    mean = mu[new] + S_no @ sol[:, 0]
    cov = S_nn - S_no @ sol[:, 1:]
    return mean, 0.5 * (cov + cov.T), new


# ---------------------------------------------------------------------------
# scalar special-function references

def normal_quantile(p: float, tol: float = 1e-12) -> float:
    """Standard normal quantile by bisecting the erf-based CDF."""
    if not 0.0 < p < 1.0:
        raise ValueError("p must be strictly between 0 and 1")
    lo, hi = -13.0, 13.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if 0.5 * (1.0 + math.erf(mid / math.sqrt(2.0))) < p:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


# Euler-Mascheroni constant to 80 digits.
_EULER_GAMMA = Decimal(
    "0.57721566490153286060651209008240243104215933593992359880576723488486772677766467"
)


def bessel_k1_series(x, terms: int = 40) -> Decimal:
    """K_1(x) from the ascending series, in 60-digit decimal arithmetic.

    K_1(x) = ln(x/2) I_1(x) + 1/x
             - (x/4) sum_k [psi(k+1) + psi(k+2)] (x^2/4)^k / (k! (k+1)!)
    with I_1(x) = (x/2) sum_k (x^2/4)^k / (k! (k+1)!) and psi the digamma
    function at integers, psi(1) = -gamma. Truncation at 40 terms is far
    below 1e-30 for 0 < x <= 10; larger x would need the asymptotic form.
    """
    xf = float(x)
    if not 0.0 < xf <= 10.0:
        raise ValueError("series evaluation is supported for 0 < x <= 10")
    with localcontext() as ctx:
        ctx.prec = 60
        xd = Decimal(xf)
        half = xd / 2
        z = half * half
        fact = [Decimal(1)]
        for k in range(1, terms + 2):
            fact.append(fact[-1] * k)
        harm = [Decimal(0)]
        for k in range(1, terms + 2):
            harm.append(harm[-1] + Decimal(1) / k)
        i1 = Decimal(0)
        s = Decimal(0)
        zk = Decimal(1)
        for k in range(terms + 1):
            base = zk / (fact[k] * fact[k + 1])
            i1 += base
            psi_sum = -2 * _EULER_GAMMA + harm[k] + harm[k + 1]
            s += psi_sum * base
            zk *= z
        i1 *= half
        return half.ln() * i1 + 1 / xd - (half / 2) * s
