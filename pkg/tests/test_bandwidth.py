import math

import numpy as np
import pytest

from quantband import bandwidth as bw
from quantband.bandwidth import (TuningParams, amise_objective, amise_plugins, amise_search, check_loss,
                                 cv_curve, cv_pilot, default_h_grid, fold_indices, select_bandwidths,
                                 simex_extrapolate, simex_pilot, undersmooth, undersmooth_scan,
                                 weight_bandwidth_b, weight_bandwidth_grid, weight_bandwidth_surrogate)
from quantband.deconv import ErrorModel, kernel_matrix, kernel_moments
from quantband.errors import NegativeSignalVariance
from quantband.estimator import EvalGrid, PrimarySample, fit_grid, fit_point


def make_sample(n, seed, dgp="linear", b=0.35):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(n)
    eps = rng.standard_normal(n)
    y = x + eps if dgp == "linear" else x * x + eps
    return PrimarySample(x + rng.laplace(0, b, n), y), rng.laplace(0, b, n)


def test_check_loss():
    assert check_loss(0.5, 2.0) == 1.0
    assert check_loss(0.5, -2.0) == 1.0
    assert check_loss(0.25, -4.0) == 3.0
    assert np.all(check_loss(0.3, np.linspace(-3, 3, 13)) >= 0)


def test_tuning_validation():
    for bad in ({"J": 1}, {"zeta": 1.0}, {"L": 1}, {"rho": 1.0}, {"D": 0}, {"h_grid": (0.1, -1.0)}):
        with pytest.raises(ValueError):
            TuningParams(**bad)


def test_weight_bandwidth_no_error_reduces_to_kde_rule():
    rng = np.random.default_rng(1)
    w = rng.normal(size=300)
    b = weight_bandwidth_b(np.zeros(10), w)
    sd = np.std(w, ddof=1)
    r_k = 46080 / 135135 / math.pi
    grid = np.geomspace(0.05, 5.0, 64) * sd
    amise = r_k / (300 * grid) + 36 * grid**4 / 4 * 3 / (8 * math.sqrt(math.pi) * sd**5)
    assert b == pytest.approx(grid[np.argmin(amise)], rel=1e-12)
    # continuous normal-reference optimum lies within one grid step
    b_star = (r_k / (300 * 36 * 3 / (8 * math.sqrt(math.pi) * sd**5))) ** 0.2
    assert abs(math.log(b / b_star)) <= math.log(grid[1] / grid[0])


def test_weight_bandwidth_grows_with_error_scale():
    # the error is doubled in the data as well, so the signal variance proxy is unchanged
    rng = np.random.default_rng(3)
    x = rng.standard_normal(250)
    u = rng.laplace(0, 0.35, 250)
    aux = rng.laplace(0, 0.35, 250)
    assert weight_bandwidth_b(2 * aux, x + 2 * u) > weight_bandwidth_b(aux, x + u)


def test_weight_bandwidth_is_grid_argmin():
    sample, aux = make_sample(250, 4)
    model = ErrorModel.empirical(aux)
    grid = weight_bandwidth_grid(model, sample.w)
    vals = weight_bandwidth_surrogate(model, sample.w, grid)
    assert weight_bandwidth_b(aux, sample.w) == grid[np.argmin(vals)]


def test_fold_indices_partition():
    folds = fold_indices(23, 5, np.random.default_rng(0))
    assert sorted(np.concatenate(folds).tolist()) == list(range(23))
    assert {len(f) for f in folds} <= {4, 5}


def _loo_oracle(sample, model, tau0, h, b):
    n = sample.n
    xs = np.linspace(sample.w.min(), sample.w.max(), 64)
    dx = xs[1] - xs[0]
    total = 0.0
    for i in range(n):
        keep = np.arange(n) != i
        sub = PrimarySample(sample.w[keep], sample.y[keep])
        vals = []
        for x in xs:
            wts = kernel_matrix(model, h, [x], sub.w)[0]
            theta = fit_point(wts, sub, tau0)
            kb = kernel_matrix(model, b, [x], [sample.w[i]])[0, 0]
            vals.append(check_loss(tau0, sample.y[i] - theta) * kb)
        vals = np.array(vals)
        total += dx * (vals.sum() - 0.5 * (vals[0] + vals[-1]))
    return total / n


def test_cv_leave_one_out_oracle():
    sample, aux = make_sample(30, 5)
    model = ErrorModel.empirical(aux)
    params = TuningParams(J=30)
    b = 0.4
    folds = [np.array([i]) for i in range(30)]
    hs = [0.3, 0.6]
    curve = cv_curve(sample, model, params, 0.5, hs, quad=None, b=b, folds=folds)
    for h, got in zip(hs, curve):
        assert got == pytest.approx(_loo_oracle(sample, model, 0.5, h, b), rel=1e-9)


def test_cv_pilot_contract():
    sample, aux = make_sample(120, 6)
    model = ErrorModel.empirical(aux)
    params = TuningParams(seed=3)
    grid = default_h_grid(sample.w, 8)
    curve = cv_curve(sample, model, params, 0.25, grid)
    assert np.all(curve[np.isfinite(curve)] > 0)
    h = cv_pilot(sample, model, params, 0.25, h_grid=grid)
    assert h in grid
    assert h == cv_pilot(sample, model, params, 0.25, h_grid=grid)


def test_undersmooth_scan_rules():
    diffs = np.full(21, 0.2)
    assert undersmooth_scan(diffs, 20, 3.0) == 1
    diffs[7] = 0.61
    diffs[3] = 5.0
    assert undersmooth_scan(diffs, 20, 3.0) == 7
    diffs[7] = 0.6  # strict inequality
    assert undersmooth_scan(diffs, 20, 3.0) == 3


def test_undersmooth_floor(monkeypatch):
    sample, _ = make_sample(50, 7)
    grid = EvalGrid.regular((-0.5, 0.5), (0.4, 0.6), 5, 2)
    params = TuningParams(L=20)
    monkeypatch.setattr(bw, "undersmooth_scan", lambda d, L, rho: 1)
    h, k = undersmooth(sample, ErrorModel.laplace(0.35), 0.4, params, grid)
    assert k == 1
    # 1/log(50) > 1/20 so the floor binds
    assert h == pytest.approx(params.zeta * 0.4 / math.log(50))


def test_undersmooth_matches_direct_scan():
    sample, _ = make_sample(150, 8, dgp="quadratic")
    model = ErrorModel.laplace(0.35)
    grid = EvalGrid.regular((-0.8, 0.8), (0.4, 0.6), 9, 3)
    params = TuningParams()
    h_opt = 0.3
    h, k = undersmooth(sample, model, h_opt, params, grid)
    base = params.zeta * h_opt
    thetas = {ell: fit_grid(sample, model, ell / params.L * base, grid).theta_hat
              for ell in range(1, params.L + 1)}

    def sup(ell):
        d = np.abs(thetas[ell] - thetas[ell - 1])
        return np.nanmax(d)

    ref = sup(params.L)
    expected = max([kk for kk in range(2, params.L + 1) if sup(kk) > params.rho * ref], default=1)
    assert k == expected
    factor = max(expected / params.L, 1 / math.log(150))
    assert h == pytest.approx(factor * base)
    assert base / math.log(150) - 1e-12 <= h <= base


def test_amise_plugins_hand_case():
    w = np.array([0.1, -0.4, 1.2, 0.7, -1.0, 0.3])
    y = np.array([0.5, -0.2, 1.1, 0.4, -0.9, 0.8])
    var_u = 0.05
    sx, sy, rho = amise_plugins(PrimarySample(w, y), var_u)
    mw, my = w.mean(), y.mean()
    var_w = sum((a - mw) ** 2 for a in w) / 5
    var_y = sum((b - my) ** 2 for b in y) / 5
    cov = sum((a - mw) * (b - my) for a, b in zip(w, y)) / 5
    assert sx == pytest.approx(math.sqrt(var_w - var_u), rel=1e-12)
    assert sy == pytest.approx(math.sqrt(var_y), rel=1e-12)
    assert rho == pytest.approx(cov / (math.sqrt(var_y) * math.sqrt(var_w - var_u)), rel=1e-12)


def test_amise_negative_signal_variance():
    w = np.array([0.0, 0.1, -0.1, 0.05])
    with pytest.raises(NegativeSignalVariance):
        amise_plugins(PrimarySample(w, w), 1.0)


def test_amise_rho_clamped():
    w = np.linspace(-1, 1, 20)
    _, _, rho = amise_plugins(PrimarySample(w, 2 * w), 0.01)
    assert rho == pytest.approx(0.99)


def test_amise_no_error_matches_bivariate_normal_reference():
    # oracle: R(K)^2/(n h1 h2) + (k^2/4) int (h1^2 f_xx + h2^2 f_yy)^2 for a bivariate normal
    sx, sy, rho, n = 1.2, 0.8, 0.4, 300
    h1, h2 = 0.3, 0.25
    mom = kernel_moments()
    got = amise_objective(h1, h2, n, ErrorModel.no_error(), sx, sy, rho, mom)
    g = np.linspace(-8, 8, 801)
    X, Y = np.meshgrid(g * sx, g * sy, indexing="ij")
    cov = np.array([[sx * sx, rho * sx * sy], [rho * sx * sy, sy * sy]])
    P = np.linalg.inv(cov)
    z = np.stack([X, Y])
    pz = np.einsum("ij,jab->iab", P, z)
    f = np.exp(-0.5 * np.einsum("iab,iab->ab", z, pz)) / (2 * math.pi * math.sqrt(np.linalg.det(cov)))
    fxx = f * (pz[0] ** 2 - P[0, 0])
    fyy = f * (pz[1] ** 2 - P[1, 1])
    integrand = (h1**2 * fxx + h2**2 * fyy) ** 2
    bias = mom.kappa21**2 / 4 * np.trapezoid(np.trapezoid(integrand, g * sy, axis=1), g * sx)
    expected = mom.l2norm**2 / (n * h1 * h2) + bias
    assert got == pytest.approx(expected, rel=1e-6)


def test_amise_search_is_grid_argmin():
    sample, aux = make_sample(200, 9)
    model = ErrorModel.empirical(aux)
    res = amise_search(sample, model)
    sx, sy, rho = amise_plugins(sample, model.variance)
    base = np.geomspace(0.05, 2.0, 32) * sample.n ** (-1 / 6)
    mom = kernel_moments()
    grid_vals = np.array([[amise_objective(a, b, sample.n, model, sx, sy, rho, mom)
                           for b in base * sy] for a in base * sx])
    assert res.objective <= np.nanmin(grid_vals)
    assert res.objective == amise_objective(res.h_w, res.h_y, sample.n, model, sx, sy, rho, mom)
    assert np.all(res.objective <= res.values[np.isfinite(res.values)])
    assert res.h_w > 0 and res.h_y > 0


def test_simex_extrapolation(monkeypatch):
    assert simex_extrapolate(0.2, 0.3) == pytest.approx(0.45)
    grid = np.array([0.1, 0.2, 0.3, 0.4])
    monkeypatch.setattr(bw, "simex_cv_curves",
                        lambda *a, **k: (np.array([3.0, 1.0, 2.0, 4.0]), np.array([3.0, 2.0, 1.0, 4.0])))
    sample, aux = make_sample(40, 10)
    h = simex_pilot(sample, ErrorModel.empirical(aux), TuningParams(D=1), 0.5, h_grid=grid)
    assert h == pytest.approx(0.45)


def test_simex_single_replicate_oracle():
    sample, aux = make_sample(40, 11)
    model = ErrorModel.empirical(aux)
    params = TuningParams(D=1, J=4)
    grid = np.array([0.3, 0.6, 1.0])
    tau0, seed, n = 0.5, 5, 40
    cv1, cv2 = bw.simex_cv_curves(sample, model, params, tau0, grid, seed=seed)

    rng = np.random.default_rng(np.random.SeedSequence([seed, 0]))
    w1 = sample.w + rng.choice(aux, n, replace=True)
    w2 = w1 + rng.choice(aux, n, replace=True)
    folds = fold_indices(n, 4, rng)
    sd = np.std(sample.w, ddof=1)
    bwid = 1.06 * sd * n ** (-0.2)

    def dens(x):
        return np.mean(np.exp(-0.5 * ((x - sample.w) / bwid) ** 2)) / (bwid * math.sqrt(2 * math.pi))

    for j, h in enumerate(grid):
        e1 = e2 = 0.0
        for fold in folds:
            train = np.setdiff1d(np.arange(n), fold)
            sub = PrimarySample(sample.w[train], sample.y[train])
            for i in fold:
                t1 = fit_point(kernel_matrix(model, h, [sample.w[i]], w1[train])[0], sub, tau0)
                t2 = fit_point(kernel_matrix(model, h, [w1[i]], w2[train])[0], sub, tau0)
                e1 += check_loss(tau0, sample.y[i] - t1) * dens(sample.w[i])
                e2 += check_loss(tau0, sample.y[i] - t2) * dens(w1[i])
        assert cv1[j] == pytest.approx(e1, rel=1e-9)
        assert cv2[j] == pytest.approx(e2, rel=1e-9)
    again = simex_pilot(sample, model, params, tau0, seed=seed, h_grid=grid)
    assert again == simex_pilot(sample, model, params, tau0, seed=seed, h_grid=grid)


def test_select_bandwidths_plan():
    sample, aux = make_sample(150, 12)
    model = ErrorModel.empirical(aux)
    grid = EvalGrid.regular((-0.8, 0.8), (0.2, 0.3), 11, 3)
    params = TuningParams(n_h=8, L=10)
    plan = select_bandwidths(sample, model, params, grid)
    assert plan.provenance == "cv"
    assert 0 < plan.h <= plan.zeta * plan.h_opt + 1e-15
    assert plan.h >= plan.zeta * plan.h_opt / math.log(150) - 1e-15
    assert min(plan.h_w, plan.h_y, plan.b) > 0
    assert plan.h_opt in plan.h_grid
    manual = select_bandwidths(sample, model, params, grid, h=0.2, h_w=0.3, h_y=0.4)
    assert (manual.h, manual.h_w, manual.h_y, manual.provenance) == (0.2, 0.3, 0.4, "manual")
