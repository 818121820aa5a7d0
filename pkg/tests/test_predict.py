import numpy as np
import pytest

from facecov.dataset import SubjectRecord
from facecov.oracle import mvn_condition
from facecov.predict import confidence_bands, predict_subject
from facecov.solver import FitResult, MeanFit
from facecov.splines import basis_from_knots, eval_basis_matrix, vech

Z975 = 1.959963984540054


def _toy_fit(rng, sigma2=0.5, theta=None):
    basis = basis_from_knots([0.4, 0.7], order=4)
    c = basis.c
    if theta is None:
        A = rng.standard_normal((c, c))
        theta = A @ A.T / c
    mean_fit = MeanFit(basis=basis, coef=0.3 * rng.standard_normal(c), lam=1.0)
    return FitResult(theta_vech=vech(theta), sigma2_hat=sigma2,
                     lambdas=(1.0, 1.0), basis=basis, mean_fit=mean_fit)


def test_prediction_matches_gaussian_conditioning(rng):
    fit = _toy_fit(rng)
    t_o = np.array([0.1, 0.35, 0.6, 0.9])
    rec = SubjectRecord(id="a", times=t_o, values=rng.standard_normal(4))
    t_n = np.array([0.2, 0.5, 0.77])
    pred = predict_subject(fit, rec, t_n)

    # oracle: condition the joint normal of (y_obs, y_new) directly
    t_all = np.concatenate([t_o, t_n])
    H = eval_basis_matrix(fit.basis, t_all)
    joint_cov = H @ fit.Theta_hat @ H.T + fit.sigma2_hat * np.eye(t_all.size)
    mean_ref, cov_ref, _ = mvn_condition(fit.mean_fit(t_all), joint_cov,
                                         np.arange(4), rec.values)
    np.testing.assert_allclose(pred.x_hat, mean_ref, rtol=1e-9, atol=1e-11)
    np.testing.assert_allclose(pred.cov, cov_ref, atol=1e-10)


def test_latent_prediction_matches_gaussian_conditioning(rng):
    # latent target: same cross-covariances, no noise on the new block
    fit = _toy_fit(rng)
    t_o = np.array([0.05, 0.45, 0.8])
    rec = SubjectRecord(id="a", times=t_o, values=rng.standard_normal(3))
    t_n = np.array([0.3, 0.66])
    pred = predict_subject(fit, rec, t_n, latent=True)

    t_all = np.concatenate([t_o, t_n])
    H = eval_basis_matrix(fit.basis, t_all)
    joint_cov = H @ fit.Theta_hat @ H.T
    joint_cov[:3, :3] += fit.sigma2_hat * np.eye(3)
    mean_ref, cov_ref, _ = mvn_condition(fit.mean_fit(t_all), joint_cov,
                                         np.arange(3), rec.values)
    np.testing.assert_allclose(pred.x_hat, mean_ref, rtol=1e-9, atol=1e-11)
    np.testing.assert_allclose(pred.cov, cov_ref, atol=1e-10)


def test_observation_and_latent_covs_differ_by_noise(rng):
    fit = _toy_fit(rng, sigma2=0.37)
    rec = SubjectRecord(id="a", times=np.array([0.2, 0.7]),
                        values=np.array([1.0, -0.5]))
    t_n = np.linspace(0.1, 0.9, 5)
    obs = predict_subject(fit, rec, t_n)
    lat = predict_subject(fit, rec, t_n, latent=True)
    np.testing.assert_allclose(obs.x_hat, lat.x_hat, rtol=1e-12)
    np.testing.assert_allclose(obs.cov - lat.cov, 0.37 * np.eye(5), atol=1e-12)


def test_zero_noise_prediction_interpolates(rng):
    # sigma2 = 0 makes the conditional mean pass through the data
    fit = _toy_fit(rng, sigma2=0.0)
    t = np.array([0.15, 0.5, 0.85])
    y = np.array([0.4, -1.2, 2.0])
    rec = SubjectRecord(id="a", times=t, values=y)
    pred = predict_subject(fit, rec, t)
    np.testing.assert_allclose(pred.x_hat, y, atol=1e-8)
    assert float(np.abs(np.diag(pred.cov)).max()) < 1e-6


def test_confidence_band_uses_the_right_quantile(rng):
    fit = _toy_fit(rng)
    rec = SubjectRecord(id="a", times=np.array([0.1, 0.6]),
                        values=np.array([0.5, 1.5]))
    pred = predict_subject(fit, rec, np.array([0.25, 0.5, 0.75]))
    banded = confidence_bands(pred, 0.95)
    half = Z975 * np.sqrt(np.diag(pred.cov))
    np.testing.assert_allclose(banded.band_hi - banded.x_hat, half, rtol=1e-12)
    np.testing.assert_allclose(banded.x_hat - banded.band_lo, half, rtol=1e-12)
    assert banded.level == 0.95
    assert pred.band_lo is None  # original result untouched


def test_confidence_band_level_validation(rng):
    fit = _toy_fit(rng)
    rec = SubjectRecord(id="a", times=np.array([0.2, 0.8]),
                        values=np.array([0.0, 1.0]))
    pred = predict_subject(fit, rec, np.array([0.5]))
    for bad in (0.0, 1.0, -0.1, 1.5):
        with pytest.raises(ValueError, match="between 0 and 1"):
            confidence_bands(pred, bad)


def test_mildly_indefinite_surface_is_repaired(rng):
    c = 6
    A = rng.standard_normal((c, c))
    theta = A @ A.T / c - 0.05 * np.eye(c)
    fit = _toy_fit(rng, sigma2=0.0, theta=theta)
    rec = SubjectRecord(id="a", times=np.array([0.1, 0.4, 0.9]),
                        values=np.array([1.0, 0.5, -0.2]))
    pred = predict_subject(fit, rec, np.array([0.3, 0.6]))
    assert np.all(np.isfinite(pred.x_hat))
    assert np.all(np.isfinite(pred.cov))


def test_hopelessly_negative_surface_raises(rng):
    fit = _toy_fit(rng, sigma2=0.0, theta=-np.eye(6))
    rec = SubjectRecord(id="a", times=np.array([0.2, 0.7]),
                        values=np.array([1.0, 2.0]))
    with pytest.raises(ValueError, match="after repair"):
        predict_subject(fit, rec, np.array([0.5]))


def test_new_times_domain_and_shapes(rng):
    fit = _toy_fit(rng)
    rec = SubjectRecord(id="a", times=np.array([0.3, 0.6]),
                        values=np.array([1.0, 2.0]))
    with pytest.raises(ValueError, match=r"\[0, 1\]"):
        predict_subject(fit, rec, np.array([0.5, 1.2]))
    scalar = predict_subject(fit, rec, 0.5)
    assert scalar.x_hat.shape == (1,)
    assert scalar.cov.shape == (1, 1)
    empty = predict_subject(fit, rec, np.array([]))
    assert empty.x_hat.shape == (0,)
    assert empty.cov.shape == (0, 0)
