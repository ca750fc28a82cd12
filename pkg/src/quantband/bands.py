"""Multiplier-bootstrap uniform confidence bands."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyGrid
from .estimator import fit_from_weights


@dataclass(frozen=True)
class BootstrapConfig:
    B: int = 1000
    alpha: tuple = (0.10, 0.05)
    seed: int = 0
    multiplier: str = "gaussian-shift"

    def __post_init__(self):
        if int(self.B) < 1:
            raise ValueError("B must be at least 1")
        alpha = tuple(float(a) for a in np.atleast_1d(self.alpha))
        if not alpha or any(not 0 < a < 1 for a in alpha):
            raise ValueError("each alpha must lie in (0, 1)")
        if self.multiplier != "gaussian-shift":
            raise ValueError(f"unsupported multiplier {self.multiplier!r}")
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "B", int(self.B))


def replicate_rng(seed: int, b: int) -> np.random.Generator:
    """Generator for bootstrap replicate ``b``; independent of B and scheduling."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(b)]))


def draw_multipliers(n: int, rng: np.random.Generator) -> np.ndarray:
    """``n`` draws of ``1 + N(0, 1)``: mean one, unit variance, Gaussian tails."""
    return 1.0 + rng.standard_normal(n)


def multiplier_matrix(n: int, cfg: BootstrapConfig) -> np.ndarray:
    return np.stack([draw_multipliers(n, replicate_rng(cfg.seed, b)) for b in range(cfg.B)])


def bootstrap_thetas(fit, sample, cfg: BootstrapConfig, multipliers=None, chunk: int = 25):
    """Bootstrap estimates, shape ``(B, nx, ntau)``.

    Each replicate reuses the cached kernel weights, rescaled by its own
    multiplier vector. ``multipliers`` overrides the random draws.
    """
    if multipliers is None:
        multipliers = multiplier_matrix(sample.n, cfg)
    multipliers = np.asarray(multipliers, dtype=float)
    cache = fit.weight_cache
    taus = fit.grid.tau_points
    out = np.empty((len(multipliers),) + fit.grid.shape)
    for start in range(0, len(multipliers), chunk):
        chi = multipliers[start:start + chunk]
        weights = cache[None, :, :] * chi[:, None, :]
        out[start:start + chunk] = fit_from_weights(weights, sample, taus)
    return out


def _standardized(boot, fit):
    valid = fit.valid & np.isfinite(fit.sigma_hat) & (fit.sigma_hat > 0)
    if not valid.any():
        raise EmptyGrid("no valid grid cells")
    with np.errstate(invalid="ignore"):
        d = (boot - fit.theta_hat) / fit.sigma_hat
    return d[:, valid], valid


def sup_stats(boot, fit):
    """Per-replicate one-sided and two-sided suprema over the valid cells."""
    d, _ = _standardized(boot, fit)
    with np.errstate(invalid="ignore"):
        m1 = np.nanmax(np.where(np.isfinite(d), d, -np.inf), axis=1)
        m2 = np.nanmax(np.where(np.isfinite(d), np.abs(d), -np.inf), axis=1)
    return m1, m2


def critical_value(stats, alpha: float) -> float:
    """The ``ceil((1 - alpha) B)``-th order statistic."""
    s = np.sort(np.asarray(stats, dtype=float))
    if s.size == 0:
        raise ValueError("no statistics")
    # tolerate representation error in (1 - alpha) * B
    k = math.ceil((1.0 - alpha) * s.size - 1e-9)
    k = min(max(k, 1), s.size)
    return float(s[k - 1])


@dataclass
class UniformBand:
    grid: object
    theta_hat: np.ndarray
    sigma_hat: np.ndarray
    alpha: tuple
    c1: dict = field(default_factory=dict)
    c2: dict = field(default_factory=dict)
    lower_two: dict = field(default_factory=dict)
    upper_two: dict = field(default_factory=dict)
    lower_left: dict = field(default_factory=dict)
    upper_right: dict = field(default_factory=dict)
    pointwise_c2: dict = field(default_factory=dict)

    def pointwise(self, alpha):
        width = self.pointwise_c2[alpha] * self.sigma_hat
        return self.theta_hat - width, self.theta_hat + width


def _columnwise_critical(values, alpha):
    b = values.shape[0]
    k = min(max(math.ceil((1.0 - alpha) * b - 1e-9), 1), b)
    return np.sort(values, axis=0)[k - 1]


def build_bands(fit, boot, cfg: BootstrapConfig) -> UniformBand:
    m1, m2 = sup_stats(boot, fit)
    d, valid = _standardized(boot, fit)
    absd = np.abs(d)
    absd = np.where(np.isfinite(absd), absd, -np.inf)
    band = UniformBand(fit.grid, fit.theta_hat, fit.sigma_hat, cfg.alpha)
    theta, sig = fit.theta_hat, fit.sigma_hat
    for a in cfg.alpha:
        c1 = critical_value(m1, a)
        c2 = critical_value(m2, a)
        band.c1[a] = c1
        band.c2[a] = c2
        band.lower_two[a] = theta - c2 * sig
        band.upper_two[a] = theta + c2 * sig
        band.lower_left[a] = theta - c1 * sig
        band.upper_right[a] = theta + c1 * sig
        pw = np.full(fit.grid.shape, np.nan)
        pw[valid] = _columnwise_critical(absd, a)
        band.pointwise_c2[a] = pw
    return band
