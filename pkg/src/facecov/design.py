"""Raw covariance products and the design linking them to (vech Theta, sigma2).

Purpose
-------
For subject i with residuals r_ij = y_ij - fhat(t_ij), the raw products
C_hat_ij1j2 = r_ij1 r_ij2 over pairs j1 <= j2 (diagonal included) are
unbiased for C(t_ij1, t_ij2) plus a noise shift sigma2 on the diagonal.
Their expectation is linear in alpha = (vech Theta, sigma2): the row at
(j1, j2) of the design block X_i is ({b(t_ij2) kron b(t_ij1)}' G_c, 1{j1=j2}).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .splines import SplineBasis, duplication_matrix, eval_basis_matrix

__all__ = ["SubjectDesign", "raw_covariances", "build_design"]


@dataclass(frozen=True)
class SubjectDesign:
    """Purpose: one subject's products and design rows.

    C_hat: length n_i = m_i(m_i+1)/2 products, stacked for j = 1..m_i as the
    block (C_jj, C_j(j+1), ..., C_jm); X: n_i x (q+1) rows as above; delta:
    diagonal indicator, 1 exactly at each block's first entry; pair_index:
    the (j1, j2) pairs in stacking order (0-based).
    """

    C_hat: np.ndarray
    X: np.ndarray
    delta: np.ndarray
    pair_index: np.ndarray

    @property
    def n_rows(self) -> int:
        return self.C_hat.size


def raw_covariances(ds, mean_fn=None) -> list:
    """Per-subject residual products over pairs j1 <= j2.

    Inputs: dataset; optional mean evaluator mean_fn(times) -> values
    (None means a zero mean). Return: list of length-n_i product vectors in
    stacking order.
    """
    out = []
    for s in ds.subjects:
        r = s.values - (np.asarray(mean_fn(s.times), dtype=float) if mean_fn else 0.0)
        j1, j2 = np.triu_indices(s.m)
        out.append(r[j1] * r[j2])
    return out


def build_design(ds, basis: SplineBasis, mean_fn=None):
    """Per-subject design blocks plus the stacked design.

    Inputs: dataset, basis, optional mean evaluator. Return:
    (blocks, X, C_hat) where blocks is a list of SubjectDesign, X is the
    stacked N x (q+1) design and C_hat the stacked length-N products, with
    N = sum_i m_i(m_i+1)/2 and q = c(c+1)/2.

    X_i alpha evaluates b(t_ij1)' Theta b(t_ij2) + 1{j1=j2} sigma2, so the
    implied surface is symmetric for any symmetric Theta by construction.
    """
    c = basis.c
    G = duplication_matrix(c)
    C_blocks = raw_covariances(ds, mean_fn)
    blocks = []
    for s, C_hat in zip(ds.subjects, C_blocks):
        B = eval_basis_matrix(basis, s.times)
        j1, j2 = np.triu_indices(s.m)
        # row r of kron is b(t_j2) kron b(t_j1), entry a*c+b = B[j2][a] B[j1][b]
        kron = (B[j2][:, :, None] * B[j1][:, None, :]).reshape(j1.size, c * c)
        delta = (j1 == j2).astype(float)
        X = np.hstack([kron @ G, delta[:, None]])
        blocks.append(
            SubjectDesign(
                C_hat=C_hat,
                X=X,
                delta=delta,
                pair_index=np.column_stack([j1, j2]),
            )
        )
    X_all = np.vstack([b.X for b in blocks])
    C_all = np.concatenate([b.C_hat for b in blocks])
    return blocks, X_all, C_all
