"""Deconvolution-kernel conditional quantile estimator.

The estimator minimizes ``|M_n(theta)|`` with
``M_n(theta) = n^-1 sum_i psi_tau(Y_i - theta) K_{U,h}(x - W_i)`` over the
midpoints of consecutive order statistics of ``Y``. Since
``M_n(theta) = (tau * sum_i w_i - sum_{Y_i < theta} w_i) / n``, every
candidate is scored from one prefix sum in ``Y``-sorted order.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .deconv import ErrorModel, QuadratureRule, kernel_matrix
from .errors import DegenerateWeights


def psi(tau, u):
    """``tau - 1{u < 0}``."""
    return np.where(np.asarray(u) < 0, tau - 1.0, tau) if np.ndim(u) else (tau - 1.0 if u < 0 else tau)


def objective(theta, weights, y, tau):
    """``n^-1 sum_i weights_i * psi_tau(y_i - theta)``, evaluated directly."""
    weights = np.asarray(weights, dtype=float)
    y = np.asarray(y, dtype=float)
    if weights.shape != y.shape:
        raise ValueError("weights and y must have the same length")
    return float(np.sum(weights * psi(tau, y - theta)) / len(y))


@dataclass(frozen=True, eq=False)
class PrimarySample:
    """Observed pairs ``(W_i, Y_i)`` with the sort machinery cached."""

    w: np.ndarray
    y: np.ndarray
    order: np.ndarray = field(init=False, repr=False)
    candidates: np.ndarray = field(init=False, repr=False)
    below: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        w = np.array(self.w, dtype=float).ravel()
        y = np.array(self.y, dtype=float).ravel()
        if w.shape != y.shape:
            raise ValueError("w and y must have the same length")
        if len(y) < 2:
            raise ValueError("need at least two observations")
        order = np.argsort(y, kind="stable")
        ys = y[order]
        nxt = np.append(ys[1:], ys[-1])
        cand = 0.5 * (ys + nxt)
        # number of observations strictly below each candidate
        below = np.searchsorted(ys, cand, side="left")
        for name, arr in (("w", w), ("y", y), ("order", order), ("candidates", cand), ("below", below)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def n(self) -> int:
        return len(self.y)

    @property
    def y_sorted(self):
        return self.order

    def subset(self, idx) -> PrimarySample:
        return PrimarySample(self.w[idx], self.y[idx])


def candidate_thetas(sample: PrimarySample) -> np.ndarray:
    return sample.candidates.copy()


def argmin_candidates(weights, sample: PrimarySample, taus):
    """Index of the minimizing candidate for every weight row and quantile level.

    ``weights`` has shape ``(..., n)``; the result has shape ``(..., len(taus))``.
    Rows whose absolute weights sum to zero get index ``-1``. Ties resolve to
    the smallest candidate.
    """
    weights = np.asarray(weights, dtype=float)
    taus = np.atleast_1d(np.asarray(taus, dtype=float))
    n = sample.n
    ws = weights[..., sample.order]
    prefix = np.zeros(ws.shape[:-1] + (n + 1,))
    np.cumsum(ws, axis=-1, out=prefix[..., 1:])
    below = prefix[..., sample.below]
    total = prefix[..., -1:]
    obj = (taus[:, None] * total[..., None, :] - below[..., None, :]) / n
    idx = np.argmin(np.abs(obj), axis=-1)
    degenerate = ~(np.abs(weights).sum(axis=-1) > 0)
    idx[degenerate] = -1
    return idx


def fit_point(weights, sample: PrimarySample, tau: float) -> float:
    """Minimizer of ``|M_n|`` over the candidate set for one weight vector."""
    weights = np.asarray(weights, dtype=float)
    if not np.all(np.isfinite(weights)):
        raise ValueError("weights must be finite")
    idx = argmin_candidates(weights[None, :], sample, [tau])[0, 0]
    if idx < 0:
        raise DegenerateWeights("kernel weights vanish at this evaluation point")
    return float(sample.candidates[idx])


@dataclass(frozen=True)
class EvalGrid:
    x_points: np.ndarray
    tau_points: np.ndarray

    def __post_init__(self):
        x = np.array(self.x_points, dtype=float).ravel()
        t = np.array(self.tau_points, dtype=float).ravel()
        if x.size == 0 or t.size == 0:
            raise ValueError("grid must be non-empty")
        if np.any(np.diff(x) <= 0) or np.any(np.diff(t) <= 0):
            raise ValueError("grid points must be strictly increasing")
        if np.any(t <= 0) or np.any(t >= 1):
            raise ValueError("quantile levels must lie in (0, 1)")
        object.__setattr__(self, "x_points", x)
        object.__setattr__(self, "tau_points", t)

    @classmethod
    def regular(cls, x_region, tau_region, nx=41, ntau=11) -> EvalGrid:
        lo, hi = x_region
        tlo, thi = tau_region
        taus = [tlo] if tlo == thi else np.linspace(tlo, thi, ntau)
        return cls(np.linspace(lo, hi, nx), taus)

    @property
    def shape(self):
        return len(self.x_points), len(self.tau_points)


@dataclass(eq=False)
class QuantileGridFit:
    grid: EvalGrid
    theta_hat: np.ndarray
    h: float
    weight_cache: np.ndarray
    valid: np.ndarray
    sigma_hat: np.ndarray = None
    density_floor_hits: int = 0
    sigma_floor_hits: int = 0

    def __post_init__(self):
        if self.sigma_hat is None:
            self.sigma_hat = np.zeros(self.grid.shape)

    @property
    def n_invalid(self) -> int:
        return int((~self.valid).sum())


def fit_from_weights(weights, sample: PrimarySample, taus):
    """Quantile estimates for each weight row; NaN where the weights degenerate."""
    idx = argmin_candidates(weights, sample, taus)
    theta = sample.candidates[np.maximum(idx, 0)]
    return np.where(idx >= 0, theta, np.nan)


def fit_grid(sample: PrimarySample, model: ErrorModel, h: float, grid: EvalGrid,
             quad: QuadratureRule | None = None) -> QuantileGridFit:
    cache = kernel_matrix(model, h, grid.x_points, sample.w, quad)
    cache.setflags(write=False)
    theta = fit_from_weights(cache, sample, grid.tau_points)
    return QuantileGridFit(grid, theta, float(h), cache, np.isfinite(theta))
