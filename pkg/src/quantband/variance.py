"""Bivariate deconvolution density and plug-in standard errors."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .deconv import kernel_matrix
from .estimator import psi

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class VarianceConfig:
    h_w: float
    h_y: float
    density_floor: float = 1e-3
    sigma_floor: float = 1e-12

    def __post_init__(self):
        if not (self.h_w > 0 and self.h_y > 0):
            raise ValueError("h_w and h_y must be positive")
        if not self.density_floor > 0 or self.sigma_floor < 0:
            raise ValueError("invalid floors")


def joint_density(sample, model, cfg: VarianceConfig, x, yv, quad=None):
    """``n^-1 sum_i K_{h_Y}(y - Y_i) K_{U,h_W}(x - W_i)`` at paired points ``(x, y)``.

    The estimate can be negative since the deconvolution kernel is not.
    """
    xs = np.atleast_1d(np.asarray(x, dtype=float))
    ys = np.atleast_1d(np.asarray(yv, dtype=float))
    xs, ys = np.broadcast_arrays(xs, ys)
    ux, xinv = np.unique(xs, return_inverse=True)
    kx = kernel_matrix(model, cfg.h_w, ux, sample.w, quad)[xinv]
    ky = kernel_matrix(None, cfg.h_y, ys.ravel(), sample.y, quad)
    out = np.mean(kx.reshape(ky.shape) * ky, axis=-1).reshape(xs.shape)
    return out if np.ndim(x) or np.ndim(yv) else float(out[0])


def sigma_hat(sample, model, fit, cfg: VarianceConfig, quad=None):
    """Fill ``fit.sigma_hat`` with the plug-in standard error on valid cells.

    ``sigma^2 = sum_i K_{U,h}^2(x - W_i) psi_tau^2(Y_i - theta) / (n f_XY(x, theta))^2``
    with the same kernel weights used to fit ``theta``. Floor hits are
    recorded on the fit. Invalid cells stay NaN.
    """
    grid = fit.grid
    nx, nt = grid.shape
    n = sample.n
    theta = fit.theta_hat
    valid = fit.valid
    xi, ti = np.nonzero(valid)
    sig = np.full((nx, nt), np.nan)
    if xi.size:
        th = theta[xi, ti]
        dens = joint_density(sample, model, cfg, grid.x_points[xi], th, quad)
        low = ~(dens >= cfg.density_floor)
        fit.density_floor_hits = int(low.sum())
        dens = np.where(low, cfg.density_floor, dens)
        k2 = fit.weight_cache[xi] ** 2
        taus = grid.tau_points[ti]
        ps = psi(taus[:, None], sample.y[None, :] - th[:, None])
        num = np.sum(k2 * ps * ps, axis=-1)
        s = np.sqrt(num) / (n * dens)
        small = ~(s > cfg.sigma_floor)
        fit.sigma_floor_hits = int(small.sum())
        sig[xi, ti] = np.where(small, cfg.sigma_floor, s)
        if fit.density_floor_hits:
            logger.info("density floor bound at %d of %d cells", fit.density_floor_hits, xi.size)
    fit.sigma_hat = sig
    return sig
