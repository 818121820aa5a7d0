"""B-spline bases and penalty matrices for symmetric surface smoothing.

The covariance surface is expanded as sum_{kl} theta_kl B_k(s) B_l(t) with a
symmetric coefficient matrix Theta stored as vech(Theta). This module builds
the ingredients of that parameterization: the basis itself (quantile interior
knots, replicated boundary knots), the second-order difference matrix D, the
duplication matrix G_c with G_c vech(Theta) = vec(Theta), and the row penalty
P = G_c' (I_c kron D D') G_c together with its embedding Q that leaves the
noise-variance coordinate unpenalized.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.interpolate import BSpline

__all__ = [
    "SplineBasis",
    "PenaltyMatrices",
    "make_basis",
    "basis_from_knots",
    "eval_basis",
    "eval_basis_matrix",
    "difference_matrix",
    "duplication_matrix",
    "vech_indices",
    "vech",
    "unvech",
    "penalty_P",
    "embed_Q",
    "penalty_matrices",
]


@dataclass(frozen=True)
class SplineBasis:
    """B-spline basis on [0, 1] with `order`-fold replicated boundary knots.

    Attributes
    ----------
    order : int
        Spline order (degree + 1); 4 means cubic.
    interior_knots : numpy.ndarray
        Strictly increasing knots in (0, 1).
    full_knots : numpy.ndarray
        Extended knot vector: `order` zeros, the interior knots, `order` ones.
    """

    order: int
    interior_knots: np.ndarray
    full_knots: np.ndarray

    @property
    def c(self) -> int:
        """Basis dimension: number of interior knots plus the order."""
        return self.interior_knots.size + self.order


@dataclass(frozen=True)
class PenaltyMatrices:
    """D, G_c, P and Q for a basis of dimension c.

    P is q x q with q = c(c+1)/2 and penalizes vech(Theta) so that
    vech(Theta)' P vech(Theta) = trace(Theta D D' Theta'). Q is P padded with
    one zero row and column for the noise-variance coordinate.
    """

    D: np.ndarray
    G: np.ndarray
    P: np.ndarray
    Q: np.ndarray


def basis_from_knots(interior_knots, order: int = 4) -> SplineBasis:
    """Assemble a basis directly from given interior knots in (0, 1)."""
    if order < 2:
        raise ValueError("order must be >= 2")
    kn = np.atleast_1d(np.asarray(interior_knots, dtype=float))
    if kn.size and (np.any(np.diff(kn) <= 0) or kn[0] <= 0.0 or kn[-1] >= 1.0):
        raise ValueError("interior knots must be strictly increasing inside (0, 1)")
    full = np.concatenate([np.zeros(order), kn, np.ones(order)])
    return SplineBasis(order=order, interior_knots=kn, full_knots=full)


def make_basis(times, n_interior: int = 10, order: int = 4) -> SplineBasis:
    """Build a B-spline basis with interior knots at quantiles of the data.

    Parameters
    ----------
    times : array_like
        Pooled observation times, all within [0, 1].
    n_interior : int
        Number of interior knots, placed at the k/(n_interior+1) quantiles of
        `times` for k = 1..n_interior.
    order : int
        Spline order (degree + 1). Defaults to cubic splines.

    Returns
    -------
    SplineBasis
        Basis of dimension c = n_interior + order.

    Raises
    ------
    ValueError
        If times leave [0, 1], or there are fewer distinct times than
        requested interior knots.
    """
    t = np.asarray(times, dtype=float).ravel()
    if t.size == 0:
        raise ValueError("no observation times given")
    if not np.all(np.isfinite(t)):
        raise ValueError("observation times must be finite")
    if t.min() < 0.0 or t.max() > 1.0:
        raise ValueError("times must lie in [0, 1]; rescale the dataset first")
    if n_interior < 1:
        raise ValueError("n_interior must be >= 1")
    if order < 2:
        raise ValueError("order must be >= 2")
    n_distinct = np.unique(t).size
    if n_distinct < n_interior:
        raise ValueError(
            f"only {n_distinct} distinct times for {n_interior} interior knots; "
            f"use a smaller n_interior"
        )
    probs = np.arange(1, n_interior + 1) / (n_interior + 1)
    knots = _nudge_apart(np.quantile(t, probs))
    return basis_from_knots(knots, order=order)


def _nudge_apart(knots: np.ndarray) -> np.ndarray:
    # Quantiles of heavily tied data can coincide (or hit the boundary); push
    # duplicates apart by the smallest representable spacing so the knot
    # vector stays strictly increasing inside (0, 1).
    out = knots.copy()
    for i in range(out.size):
        floor = out[i - 1] if i else 0.0
        if out[i] <= floor:
            out[i] = np.nextafter(floor, 1.0)
    for i in range(out.size - 1, -1, -1):
        ceil = out[i + 1] if i + 1 < out.size else 1.0
        if out[i] >= ceil:
            out[i] = np.nextafter(ceil, 0.0)
    return out


def eval_basis_matrix(basis: SplineBasis, times) -> np.ndarray:
    """Evaluate all c basis functions at each time.

    Returns the (len(times), c) matrix with rows b(t)'. Rows sum to one and
    have at most `order` nonzero entries; t = 1 is assigned to the last span
    so the boundary value is well defined.
    """
    ts = np.asarray(times, dtype=float).ravel()
    if ts.size == 0:
        return np.zeros((0, basis.c))
    if ts.min() < 0.0 or ts.max() > 1.0:
        raise ValueError("evaluation points must lie in [0, 1]")
    return BSpline.design_matrix(ts, basis.full_knots, basis.order - 1).toarray()


def eval_basis(basis: SplineBasis, t: float) -> np.ndarray:
    """Basis vector b(t) of length c for a single point t in [0, 1]."""
    return eval_basis_matrix(basis, [t])[0]


def difference_matrix(c: int) -> np.ndarray:
    """Second-difference map of shape (c, c-2).

    D' theta computes theta_k - 2 theta_{k+1} + theta_{k+2} for
    k = 1..c-2, so constants and index-linear sequences lie in null(D').
    """
    if c < 3:
        raise ValueError("second differences need at least 3 coefficients")
    Dt = np.zeros((c - 2, c))
    idx = np.arange(c - 2)
    Dt[idx, idx] = 1.0
    Dt[idx, idx + 1] = -2.0
    Dt[idx, idx + 2] = 1.0
    return Dt.T


def vech_indices(c: int) -> tuple[np.ndarray, np.ndarray]:
    """(row, col) arrays of the lower triangle in column-major order."""
    cols = np.concatenate([np.full(c - j, j, dtype=int) for j in range(c)])
    rows = np.concatenate([np.arange(j, c) for j in range(c)])
    return rows, cols


def vech(M: np.ndarray) -> np.ndarray:
    """Stack the lower-triangle columns of a square matrix."""
    M = np.asarray(M)
    rows, cols = vech_indices(M.shape[0])
    return M[rows, cols]


def unvech(v, c: int) -> np.ndarray:
    """Expand a length-c(c+1)/2 vector into the symmetric matrix it encodes."""
    v = np.asarray(v, dtype=float)
    if v.size != c * (c + 1) // 2:
        raise ValueError(f"expected {c * (c + 1) // 2} entries for c={c}, got {v.size}")
    out = np.zeros((c, c))
    rows, cols = vech_indices(c)
    out[rows, cols] = v
    out[cols, rows] = v
    return out


def duplication_matrix(c: int) -> np.ndarray:
    """Duplication matrix G_c with G_c vech(Theta) = vec(Theta).

    vec stacks columns, so entry (i, j) of Theta sits at vec index i + c*j.
    Shape is (c^2, c(c+1)/2); entries are 0/1.
    """
    if c < 1:
        raise ValueError("c must be >= 1")
    q = c * (c + 1) // 2
    G = np.zeros((c * c, q))
    rows, cols = vech_indices(c)
    for col, (i, j) in enumerate(zip(rows, cols)):
        G[i + c * j, col] = 1.0
        G[j + c * i, col] = 1.0
    return G


def penalty_P(D: np.ndarray, G: np.ndarray) -> np.ndarray:
    """Row penalty on vech(Theta): P = G' (I_c kron D D') G.

    All entries are small integers, so the matrix is exact in float64.
    """
    c = D.shape[0]
    if G.shape[0] != c * c:
        raise ValueError("duplication matrix does not match the basis dimension")
    R = D @ D.T
    return G.T @ np.kron(np.eye(c), R) @ G


def embed_Q(P: np.ndarray) -> np.ndarray:
    """Pad P with a zero final row/column for the unpenalized noise coordinate."""
    q = P.shape[0]
    Q = np.zeros((q + 1, q + 1))
    Q[:q, :q] = P
    return Q


def penalty_matrices(c: int) -> PenaltyMatrices:
    """Build D, G_c, P and Q for a basis of dimension c."""
    D = difference_matrix(c)
    G = duplication_matrix(c)
    P = penalty_P(D, G)
    return PenaltyMatrices(D=D, G=G, P=P, Q=embed_Q(P))
