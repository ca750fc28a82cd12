import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from quantband.deconv import ErrorModel
from quantband.errors import DegenerateWeights
from quantband.estimator import (EvalGrid, PrimarySample, candidate_thetas, fit_from_weights, fit_grid,
                                 fit_point, objective, psi)


def brute_force(weights, y, tau):
    """Scan every candidate with the direct objective; first minimum wins."""
    ys = np.sort(y)
    cands = 0.5 * (ys + np.append(ys[1:], ys[-1]))
    best, best_val = None, np.inf
    for c in cands:
        v = abs(objective(c, weights, y, tau))
        if v < best_val:
            best, best_val = c, v
    return best


def test_psi():
    assert psi(0.5, 1.0) == 0.5
    assert psi(0.5, -1.0) == -0.5
    assert psi(0.3, 0.0) == 0.3


def test_objective_examples():
    assert objective(2.5, np.ones(4), [1, 2, 3, 4], 0.5) == 0.0
    assert objective(0.0, np.ones(4), [1, 2, 3, 4], 0.5) == 0.5
    assert objective(1.5, [2.0, 0.0], [1, 2], 0.25) == pytest.approx(-0.75)


@pytest.mark.parametrize("y, expected", [([1, 3], [2, 3]), ([5, 5, 5], [5, 5, 5]), ([1, 2, 3], [1.5, 2.5, 3])])
def test_candidates(y, expected):
    sample = PrimarySample(np.zeros(len(y)), y)
    np.testing.assert_array_equal(candidate_thetas(sample), expected)


def test_candidates_unsorted_input():
    sample = PrimarySample(np.zeros(3), [3.0, 1.0, 2.0])
    np.testing.assert_array_equal(candidate_thetas(sample), [1.5, 2.5, 3.0])


def test_fit_point_examples():
    assert fit_point(np.ones(4), PrimarySample(np.zeros(4), [1, 2, 3, 5]), 0.5) == 2.5
    assert fit_point([0.3, 2.0, 1.0], PrimarySample(np.zeros(3), [7.0, 7.0, 7.0]), 0.9) == 7.0


def test_fit_point_seeded_against_brute_force():
    rng = np.random.default_rng(25)
    y = rng.normal(size=25)
    w = rng.uniform(0.1, 2.0, 25)
    assert fit_point(w, PrimarySample(np.zeros(25), y), 0.3) == brute_force(w, y, 0.3)


def test_fit_point_zero_weights():
    with pytest.raises(DegenerateWeights):
        fit_point(np.zeros(3), PrimarySample(np.zeros(3), [1, 2, 3]), 0.5)


def test_fit_point_tie_goes_to_smallest():
    # objective is zero on the whole flat stretch between 2 and 3
    y = [1.0, 2.0, 3.0, 4.0]
    sample = PrimarySample(np.zeros(4), y)
    assert fit_point(np.ones(4), sample, 0.5) == 2.5
    assert fit_point([1.0, 1.0, 0.0, 2.0], sample, 0.5) == brute_force(np.array([1.0, 1.0, 0.0, 2.0]), y, 0.5)


@settings(max_examples=100, deadline=None)
@given(st.integers(2, 30), st.floats(0.01, 0.99), st.integers(0, 2**32 - 1), st.booleans())
def test_argmin_matches_brute_force(n, tau, seed, ties):
    rng = np.random.default_rng(seed)
    y = rng.integers(0, 4, n).astype(float) if ties else rng.normal(size=n)
    w = rng.normal(size=n)
    if not np.abs(w).sum() > 0:
        return
    assert fit_point(w, PrimarySample(np.zeros(n), y), tau) == brute_force(w, y, tau)


def test_fit_from_weights_marks_degenerate_rows():
    sample = PrimarySample(np.zeros(3), [1.0, 2.0, 3.0])
    out = fit_from_weights(np.array([[1.0, 1.0, 1.0], [0.0, 0.0, 0.0]]), sample, [0.5])
    assert out[0, 0] == 1.5
    assert np.isnan(out[1, 0])


def test_grid_validation():
    with pytest.raises(ValueError):
        EvalGrid([0.0, 1.0], [0.0, 0.5])
    with pytest.raises(ValueError):
        EvalGrid([1.0, 0.0], [0.5])
    g = EvalGrid.regular((-1, 1), (0.3, 0.3), 5, 4)
    assert g.shape == (5, 1)


def test_constant_response():
    rng = np.random.default_rng(0)
    sample = PrimarySample(rng.normal(size=40), np.full(40, 4.0))
    grid = EvalGrid.regular((-0.5, 0.5), (0.2, 0.8), 5, 3)
    fit = fit_grid(sample, ErrorModel.laplace(0.3), 0.4, grid)
    assert np.all(fit.theta_hat[fit.valid] == 4.0)


def test_consistency_without_error():
    rng = np.random.default_rng(11)
    x = rng.standard_normal(2000)
    sample = PrimarySample(x, x + rng.standard_normal(2000))
    grid = EvalGrid([0.0], [0.5])
    fit = fit_grid(sample, ErrorModel.no_error(), 0.3, grid)
    assert abs(fit.theta_hat[0, 0]) < 0.1


def test_grid_matches_fit_point():
    rng = np.random.default_rng(5)
    model = ErrorModel.laplace(0.3)
    sample = PrimarySample(rng.normal(size=60), rng.normal(size=60))
    grid = EvalGrid.regular((-0.5, 0.5), (0.25, 0.75), 4, 3)
    fit = fit_grid(sample, model, 0.35, grid)
    for j in range(4):
        for k in range(3):
            assert fit.theta_hat[j, k] == fit_point(fit.weight_cache[j], sample, grid.tau_points[k])
