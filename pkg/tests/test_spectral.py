import numpy as np
import pytest

from facecov.spectral import default_grid, eigendecompose, eval_cov_grid
from facecov.splines import basis_from_knots, eval_basis_matrix

from conftest import random_instance


def test_default_grid_shape_and_bounds():
    g = default_grid()
    assert g.size == 101
    assert g[0] == 0.0 and g[-1] == 1.0
    with pytest.raises(ValueError, match="two points"):
        default_grid(1)


def test_eval_cov_grid_matches_direct_evaluation(rng):
    _, _, _, basis = random_instance(rng)
    c = basis.c
    A = rng.standard_normal((c, c))
    Theta = A + A.T
    grid = np.linspace(0, 1, 17)
    C = eval_cov_grid(Theta, grid, basis=basis)
    B = eval_basis_matrix(basis, grid)
    np.testing.assert_allclose(C, B @ Theta @ B.T, atol=1e-12)
    np.testing.assert_array_equal(C, C.T)


def test_eval_cov_grid_rejects_out_of_domain(rng):
    _, _, _, basis = random_instance(rng)
    Theta = np.eye(basis.c)
    with pytest.raises(ValueError, match=r"\[0, 1\]"):
        eval_cov_grid(Theta, np.array([0.0, 1.5]), basis=basis)


def test_constant_kernel_has_unit_eigenvalue():
    # C(s, t) = 1 has the single eigenpair (1, psi = 1) in L2[0, 1];
    # rectangle-rule quadrature reproduces both exactly on any grid
    grid = np.linspace(0, 1, 51)
    C = np.ones((51, 51))
    res = eigendecompose(C, grid)
    assert res.eigenvalues[0] == pytest.approx(1.0, abs=1e-12)
    np.testing.assert_allclose(res.eigenfunctions[:, 0], np.ones(51), atol=1e-10)
    assert np.all(np.abs(res.eigenvalues[1:]) < 1e-10)


def test_eigenfunctions_are_quadrature_orthonormal(rng):
    grid = np.linspace(0, 1, 40)
    A = rng.standard_normal((40, 8))
    C = A @ A.T / 8.0
    res = eigendecompose(C, grid)
    Psi = res.eigenfunctions
    gram = Psi.T @ Psi / grid.size
    np.testing.assert_allclose(gram, np.eye(Psi.shape[1]), atol=1e-8)


def test_eigendecompose_reconstructs_the_surface(rng):
    grid = np.linspace(0, 1, 30)
    A = rng.standard_normal((30, 5))
    C = A @ A.T / 5.0  # PSD, rank 5
    res = eigendecompose(C, grid)
    recon = (res.eigenfunctions * res.eigenvalues) @ res.eigenfunctions.T
    np.testing.assert_allclose(recon, C, atol=1e-8)


def test_eigenvalues_sorted_descending(rng):
    grid = np.linspace(0, 1, 25)
    A = rng.standard_normal((25, 25))
    res = eigendecompose(A @ A.T, grid)
    assert np.all(np.diff(res.eigenvalues) <= 0)
    assert np.all(np.diff(res.raw_eigenvalues) <= 0)


def test_sign_convention_largest_entry_positive(rng):
    grid = np.linspace(0, 1, 20)
    A = rng.standard_normal((20, 4))
    res = eigendecompose(A @ A.T, grid)
    for j in range(res.k):
        col = res.eigenfunctions[:, j]
        assert col[np.argmax(np.abs(col))] > 0


def test_negative_eigenvalues_trimmed_but_reported():
    grid = np.linspace(0, 1, 10)
    u = np.linspace(-1, 1, 10)
    C = np.outer(u, u) - 0.3 * np.eye(10)  # indefinite
    res = eigendecompose(C, grid)
    assert np.all(res.eigenvalues >= 0)
    assert res.raw_eigenvalues.min() < 0
    assert res.k < res.raw_eigenvalues.size
    full = eigendecompose(C, grid, trim_negative=False)
    assert full.k == 10


def test_eigendecompose_validates_inputs():
    grid = np.linspace(0, 1, 5)
    with pytest.raises(ValueError, match="does not match"):
        eigendecompose(np.eye(4), grid)
    C = np.eye(5)
    C[0, 1] = 0.5
    with pytest.raises(ValueError, match="symmetric"):
        eigendecompose(C, grid)


def test_rank_one_spline_surface_round_trip():
    # theta = vv' makes C(s, t) = f(s) f(t) with f = B v; the leading
    # eigenfunction must be f normalized in the quadrature norm
    basis = basis_from_knots([0.5], order=4)
    v = np.array([0.2, -1.0, 0.5, 1.5, -0.3])
    grid = np.linspace(0, 1, 201)
    C = eval_cov_grid(np.outer(v, v), grid, basis=basis)
    res = eigendecompose(C, grid)
    f = eval_basis_matrix(basis, grid) @ v
    norm2 = float(np.mean(f ** 2))
    assert res.eigenvalues[0] == pytest.approx(norm2, rel=1e-10)
    f_unit = f / np.sqrt(norm2)
    if f_unit[np.argmax(np.abs(f_unit))] < 0:
        f_unit = -f_unit
    np.testing.assert_allclose(res.eigenfunctions[:, 0], f_unit, atol=1e-8)
    assert np.all(np.abs(res.eigenvalues[1:]) < 1e-10)
