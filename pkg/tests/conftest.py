"""Shared builders for small random problem instances.

Design entries and raw products are snapped to dyadic rationals (k / 2^20)
so the exact-arithmetic oracles work with short fractions and stay fast;
the identities under test hold for any inputs, so nothing is lost.
"""

import numpy as np
import pytest

from facecov.dataset import SparseFunctionalDataset, SubjectRecord
from facecov.design import build_design
from facecov.splines import basis_from_knots, penalty_matrices

DYADIC = 2.0 ** 20
TEST_RIDGE = 2.0 ** -20


def random_dataset(rng, n=None, m_lo=2, m_hi=4):
    n = int(rng.integers(6, 9)) if n is None else n
    records = []
    for i in range(n):
        m = int(rng.integers(m_lo, m_hi + 1))
        records.append(SubjectRecord(
            id=f"s{i + 1}", times=rng.random(m), values=rng.standard_normal(m)))
    return SparseFunctionalDataset(subjects=records, time_domain=(0.0, 1.0))


def random_instance(rng, c5=False, quantize=True):
    """Random per-subject design blocks with N rows > p columns.

    Returns (X_blocks, C_blocks, Q, basis). c5 picks the 5-function basis
    (p = 16) instead of the knot-free one (p = 11); six or more subjects
    with at least two observations keep N >= 18.
    """
    ds = random_dataset(rng)
    knots = [float(rng.uniform(0.3, 0.7))] if c5 else []
    basis = basis_from_knots(knots, order=4)
    blocks, _, _ = build_design(ds, basis)
    X_blocks = [b.X for b in blocks]
    C_blocks = [b.C_hat for b in blocks]
    if quantize:
        X_blocks = [np.round(X * DYADIC) / DYADIC for X in X_blocks]
        C_blocks = [np.round(C * DYADIC) / DYADIC for C in C_blocks]
    return X_blocks, C_blocks, penalty_matrices(basis.c).Q, basis


def random_weight_blocks(rng, X_blocks, quantize=True):
    """Random symmetric positive definite weight block per subject."""
    W_blocks = []
    for X in X_blocks:
        n = X.shape[0]
        A = rng.standard_normal((n, n + 2))
        W = A @ A.T / (n + 2) + 0.5 * np.eye(n)
        if quantize:
            W = np.round(W * DYADIC) / DYADIC
        W_blocks.append(0.5 * (W + W.T))
    return W_blocks


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
