import numpy as np
import pytest

from quantband.deconv import ErrorModel, base_kernel, kernel_matrix
from quantband.estimator import EvalGrid, PrimarySample, fit_grid
from quantband.variance import VarianceConfig, joint_density, sigma_hat


def dgp1(n, seed, b=0.35):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(n)
    return PrimarySample(x + rng.laplace(0, b, n), x + rng.standard_normal(n))


def test_config_validation():
    with pytest.raises(ValueError):
        VarianceConfig(0.0, 1.0)
    with pytest.raises(ValueError):
        VarianceConfig(1.0, 1.0, density_floor=0.0)


def test_no_error_density_is_product_kde():
    rng = np.random.default_rng(2)
    sample = PrimarySample(rng.normal(size=30), rng.normal(size=30))
    cfg = VarianceConfig(0.4, 0.6)
    x, y = 0.3, -0.2
    expected = np.mean(base_kernel((x - sample.w) / 0.4) / 0.4 * base_kernel((y - sample.y) / 0.6) / 0.6)
    got = joint_density(sample, ErrorModel.no_error(), cfg, x, y)
    assert got == pytest.approx(expected, rel=1e-12)


def test_density_integrates_to_one():
    rng = np.random.default_rng(500)
    n = 500
    x = rng.standard_normal(n)
    sample = PrimarySample(x + rng.laplace(0, 0.3, n), 0.5 * x + rng.standard_normal(n))
    model = ErrorModel.laplace(0.3)
    cfg = VarianceConfig(0.3, 0.3)
    g = np.arange(-200, 201) * 0.05
    kx = kernel_matrix(model, cfg.h_w, g, sample.w)
    ky = kernel_matrix(None, cfg.h_y, g, sample.y)
    surface = kx @ ky.T / n
    total = np.trapezoid(np.trapezoid(surface, g, axis=1), g)
    assert total == pytest.approx(1.0, abs=0.02)
    # the surface agrees with the public function
    idx = [(190, 200), (200, 210), (230, 170)]
    got = joint_density(sample, model, cfg, g[[i for i, _ in idx]], g[[j for _, j in idx]])
    np.testing.assert_allclose(got, [surface[i, j] for i, j in idx], rtol=1e-12, atol=1e-15)


def test_sigma_hand_case():
    sample = PrimarySample([0.0, 1.0, 2.0], [0.0, 1.0, 2.0])
    model = ErrorModel.no_error()
    grid = EvalGrid([0.0], [0.5])
    fit = fit_grid(sample, model, 1.0, grid)
    cfg = VarianceConfig(1.0, 1.0)
    sig = sigma_hat(sample, model, fit, cfg)
    theta = fit.theta_hat[0, 0]
    k = [base_kernel(0.0 - wi) for wi in (0.0, 1.0, 2.0)]
    num = 0.0
    dens = 0.0
    for ki, yi in zip(k, (0.0, 1.0, 2.0)):
        p = 0.5 - (1.0 if yi - theta < 0 else 0.0)
        num += ki * ki * p * p
        dens += ki * base_kernel(theta - yi) / 3
    dens = max(dens, 1e-3)
    assert sig[0, 0] == pytest.approx(np.sqrt(num) / (3 * dens), rel=1e-12)


def test_sigma_numerator_all_above():
    sample = dgp1(40, 1)
    model = ErrorModel.laplace(0.35)
    grid = EvalGrid([0.0], [0.3])
    fit = fit_grid(sample, model, 0.5, grid)
    # shift every response above the estimate; weights do not depend on y
    theta = fit.theta_hat[0, 0]
    shifted = PrimarySample(sample.w, np.full(40, theta + 1.0))
    cfg = VarianceConfig(0.4, 0.4)
    sig = sigma_hat(shifted, model, fit, cfg)
    dens = max(joint_density(shifted, model, cfg, 0.0, theta), cfg.density_floor)
    num = 0.3**2 * np.sum(fit.weight_cache[0] ** 2)
    assert sig[0, 0] == pytest.approx(np.sqrt(num) / (40 * dens), rel=1e-12)


def test_sigma_positive_and_nan_on_invalid():
    sample = dgp1(100, 4)
    model = ErrorModel.laplace(0.35)
    grid = EvalGrid.regular((-0.8, 0.8), (0.2, 0.8), 7, 3)
    fit = fit_grid(sample, model, 0.3, grid)
    fit.valid[0, 0] = False
    sig = sigma_hat(sample, model, fit, VarianceConfig(0.3, 0.3))
    assert np.isnan(sig[0, 0])
    rest = sig[fit.valid]
    assert np.all(np.isfinite(rest)) and np.all(rest > 0)


def _median_var(n, h, seed=0):
    sample = dgp1(n, seed)
    model = ErrorModel.laplace(0.35)
    grid = EvalGrid.regular((-0.8, 0.8), (0.3, 0.7), 9, 3)
    fit = fit_grid(sample, model, h, grid)
    sigma_hat(sample, model, fit, VarianceConfig(0.3, 0.3))
    return np.nanmedian(fit.sigma_hat**2)


def test_variance_rate():
    # fixed h: variance scales like 1/n
    ratio = _median_var(1000, 0.3) / _median_var(2000, 0.3)
    assert 1.6 < ratio < 2.5
    # shrinking h inflates the variance at least like 1/h and at most like h^-5
    growth = _median_var(1000, 0.2) / _median_var(1000, 0.3)
    assert 1.5 < growth < 1.5**5
    # h proportional to n^(-1/5): slower than 1/n decay
    r = _median_var(1000, 0.3) / _median_var(2000, 0.3 * 2**-0.2)
    assert 1.0 < r < 2.0
