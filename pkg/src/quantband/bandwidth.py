"""Bandwidth selection.

The estimation bandwidth ``h`` comes from a two-stage rule: an MSE-oriented
pilot (J-fold cross-validation with the check loss, or the SIMEX variant) is
inflated by ``zeta`` and then shrunk until the grid estimates stop moving in
a way that signals bias. The density bandwidths ``(h_W, h_Y)`` minimize a
normal-reference AMISE of the bivariate deconvolution density.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .deconv import (ErrorModel, KernelMoments, _reciprocal_charfn, fourier_kernel,
                     gauss_legendre, kernel_matrix, kernel_moments)
from .errors import NegativeSignalVariance, NoFiniteCandidate
from .estimator import PrimarySample, fit_from_weights

logger = logging.getLogger(__name__)

CV_X_POINTS = 64
RHO_CLAMP = 0.99


@dataclass(frozen=True)
class TuningParams:
    J: int = 5
    zeta: float = 1.3
    L: int = 20
    rho: float = 3.0
    D: int = 30
    h_grid: tuple | None = None
    n_h: int = 32
    seed: int = 0

    def __post_init__(self):
        if self.J < 2:
            raise ValueError("J must be at least 2")
        if not self.zeta > 1:
            raise ValueError("zeta must exceed 1")
        if self.L < 2:
            raise ValueError("L must be at least 2")
        if not self.rho > 1:
            raise ValueError("rho must exceed 1")
        if self.D < 1:
            raise ValueError("D must be at least 1")
        if self.h_grid is not None:
            grid = tuple(float(h) for h in self.h_grid)
            if not grid or any(not h > 0 for h in grid):
                raise ValueError("h_grid must be non-empty and positive")
            object.__setattr__(self, "h_grid", grid)


@dataclass
class BandwidthPlan:
    h: float
    h_opt: float
    h_w: float
    h_y: float
    b: float
    provenance: str
    k: int
    L: int
    zeta: float
    h_grid: list = field(default_factory=list)

    @property
    def undersmooth_factor(self) -> float:
        return self.h / (self.zeta * self.h_opt)

    def to_dict(self):
        d = asdict(self)
        d["undersmooth_factor"] = self.undersmooth_factor
        return d


def check_loss(tau, u):
    """Quantile check loss ``(tau - 1{u < 0}) u``."""
    u = np.asarray(u, dtype=float)
    out = u * np.where(u < 0, tau - 1.0, tau)
    return out if out.ndim else float(out)


def default_h_grid(w, n_points: int = 32) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    base = np.std(w, ddof=1) * len(w) ** (-1.0 / 9.0)
    return np.geomspace(0.05, 2.0, n_points) * base


def _inverse_sq_integral(model, h, quad):
    """``int phi_K^2(t) / |phi_U(t/h)|^2 dt`` over ``[-1, 1]``."""
    recip, _ = _reciprocal_charfn(model, quad.nodes / h)
    return float(np.sum(quad.weights * fourier_kernel(quad.nodes) ** 2 * np.abs(recip) ** 2))


def weight_bandwidth_surrogate(model, w, b_values, quad=None, var_u=None):
    """Normal-reference AMISE of the deconvolution density estimator of ``f_X``."""
    quad = quad or gauss_legendre()
    w = np.asarray(w, dtype=float)
    n = len(w)
    var_u = model.variance if var_u is None else var_u
    sx = math.sqrt(max(np.var(w, ddof=1) - var_u, 1e-6))
    kappa = kernel_moments(quad).kappa21
    roughness = 3.0 / (8.0 * math.sqrt(math.pi) * sx**5)
    out = []
    for b in np.atleast_1d(b_values):
        with np.errstate(over="ignore", invalid="ignore"):
            var_term = _inverse_sq_integral(model, b, quad) / (2.0 * math.pi * n * b)
        out.append(var_term + kappa**2 * b**4 / 4.0 * roughness)
    return np.array(out)


def weight_bandwidth_grid(model, w, var_u=None, n_grid: int = 64):
    w = np.asarray(w, dtype=float)
    var_u = model.variance if var_u is None else var_u
    sx = math.sqrt(max(np.var(w, ddof=1) - var_u, 1e-6))
    return np.geomspace(0.05, 5.0, n_grid) * sx


def select_weight_bandwidth(model: ErrorModel, w, quad=None, var_u=None) -> float:
    grid = weight_bandwidth_grid(model, w, var_u)
    vals = weight_bandwidth_surrogate(model, w, grid, quad, var_u)
    if not np.any(np.isfinite(vals)):
        raise NoFiniteCandidate("weight bandwidth surrogate is non-finite on the whole grid")
    return float(grid[np.nanargmin(np.where(np.isfinite(vals), vals, np.nan))])


def weight_bandwidth_b(aux, w, quad=None) -> float:
    """Bandwidth of the deconvolution kernel weighting the CV criterion.

    ``aux`` is the auxiliary error sample, ``w`` the observed covariate.
    """
    aux = np.asarray(aux, dtype=float)
    if aux.size < 2:
        raise ValueError("need at least two auxiliary draws")
    return select_weight_bandwidth(ErrorModel.empirical(aux), w, quad)


def fold_indices(n: int, J: int, rng: np.random.Generator) -> list:
    """Seeded shuffle cut into ``J`` contiguous blocks of (nearly) equal size."""
    if J > n:
        raise ValueError("more folds than observations")
    return np.array_split(rng.permutation(n), J)


def _folds_for(params, n, *key):
    rng = np.random.default_rng(np.random.SeedSequence([int(params.seed), *key]))
    return fold_indices(n, params.J, rng)


def cv_curve(sample: PrimarySample, model: ErrorModel, params: TuningParams, tau0: float,
             h_grid, x_region=None, quad=None, b=None, folds=None):
    """Cross-validated check loss for each bandwidth in ``h_grid``."""
    n = sample.n
    lo, hi = x_region if x_region is not None else (sample.w.min(), sample.w.max())
    xs = np.linspace(lo, hi, CV_X_POINTS)
    tw = np.full(CV_X_POINTS, (hi - lo) / (CV_X_POINTS - 1))
    tw[[0, -1]] *= 0.5
    if b is None:
        b = select_weight_bandwidth(model, sample.w, quad)
    kb = kernel_matrix(model, b, xs, sample.w, quad)
    if folds is None:
        folds = _folds_for(params, n, 0)
    train_sets = []
    for fold in folds:
        train = np.setdiff1d(np.arange(n), fold)
        train_sets.append((fold, train, sample.subset(train)))
    curve = np.empty(len(h_grid))
    for j, h in enumerate(h_grid):
        kh = kernel_matrix(model, h, xs, sample.w, quad)
        total = 0.0
        for fold, train, sub in train_sets:
            theta = fit_from_weights(kh[:, train], sub, [tau0])[:, 0]
            if not np.all(np.isfinite(theta)):
                total = np.inf
                break
            loss = check_loss(tau0, sample.y[fold][None, :] - theta[:, None])
            total += float(np.sum(tw[:, None] * loss * kb[:, fold]))
        curve[j] = total / n
    return curve


def _argmin_finite(values, grid, what):
    values = np.asarray(values, dtype=float)
    if not np.any(np.isfinite(values)):
        raise NoFiniteCandidate(f"{what}: no finite criterion value")
    return float(grid[np.nanargmin(np.where(np.isfinite(values), values, np.nan))])


def cv_pilot(sample, model, params: TuningParams, tau0: float, x_region=None, quad=None,
             h_grid=None) -> float:
    """Pilot bandwidth minimizing the J-fold CV criterion over ``h_grid``."""
    h_grid = np.asarray(h_grid if h_grid is not None else
                        (params.h_grid or default_h_grid(sample.w, params.n_h)))
    curve = cv_curve(sample, model, params, tau0, h_grid, x_region, quad)
    return _argmin_finite(curve, h_grid, "cv_pilot")


def undersmooth_scan(sup_diffs, L: int, rho: float) -> int:
    """Largest ``k`` with ``sup_diffs[k] > rho * sup_diffs[L]``, else 1.

    ``sup_diffs`` is indexed by ``ell`` (entries 0 and 1 unused).
    """
    for k in range(L, 1, -1):
        if sup_diffs[k] > rho * sup_diffs[L]:
            return k
    return 1


def undersmooth(sample, model, h_opt: float, params: TuningParams, grid, quad=None):
    """Returns ``(h, k)`` for the undersmoothed estimation bandwidth."""
    if not h_opt > 0:
        raise ValueError("h_opt must be positive")
    h_over = params.zeta * h_opt
    L = params.L
    thetas = [None]
    for ell in range(1, L + 1):
        cache = kernel_matrix(model, ell / L * h_over, grid.x_points, sample.w, quad)
        thetas.append(fit_from_weights(cache, sample, grid.tau_points))
    diffs = np.zeros(L + 1)
    for ell in range(2, L + 1):
        d = np.abs(thetas[ell] - thetas[ell - 1])
        diffs[ell] = np.nanmax(d) if np.any(np.isfinite(d)) else 0.0
    k = undersmooth_scan(diffs, L, params.rho)
    factor = min(max(k / L, 1.0 / math.log(sample.n)), 1.0)
    return factor * h_over, k


@dataclass
class AmiseSearch:
    h_w: float
    h_y: float
    rho: float
    sigma_x: float
    sigma_y: float
    points: np.ndarray
    values: np.ndarray

    @property
    def objective(self) -> float:
        return float(np.min(self.values))


def amise_plugins(sample, var_u: float):
    """Sample plug-ins ``(sigma_X, sigma_Y, rho)`` for the bivariate rule of thumb."""
    cov = np.cov(sample.w, sample.y, ddof=1)
    var_w, var_y, cov_wy = cov[0, 0], cov[1, 1], cov[0, 1]
    var_x = var_w - var_u
    if not var_x > 0:
        raise NegativeSignalVariance(
            f"sample var(W)={var_w:.4g} does not exceed var(U)={var_u:.4g}; supply h_W, h_Y manually"
        )
    sx, sy = math.sqrt(var_x), math.sqrt(var_y)
    rho = cov_wy / (sy * sx)
    if abs(rho) > RHO_CLAMP:
        logger.warning("correlation plug-in %.4f clamped to +/-%.2f", rho, RHO_CLAMP)
        rho = math.copysign(RHO_CLAMP, rho)
    return sx, sy, rho


def amise_objective(h_w, h_y, n, model, sx, sy, rho, moments: KernelMoments, quad=None,
                    inverse_sq=None):
    """Sample AMISE of the bivariate density; ``inverse_sq`` caches the h_W integral."""
    quad = quad or gauss_legendre()
    k2 = moments.kappa21**2
    c = (1.0 - rho**2) ** 2.5
    if inverse_sq is None:
        inverse_sq = _inverse_sq_integral(model, h_w, quad)
    var_term = moments.l2norm * inverse_sq / (2.0 * math.pi * n * h_y * h_w)
    return (var_term
            + 3.0 * k2 / (64.0 * math.pi * c * sx**5 * sy) * h_w**4
            + 3.0 * k2 / (64.0 * math.pi * c * sy**5 * sx) * h_y**4
            + (1.0 + 2.0 * rho**2) * k2 / (32.0 * math.pi * c * sx**3 * sy**3) * h_w**2 * h_y**2)


def amise_search(sample, model, moments=None, quad=None, var_u=None, n_grid: int = 32) -> AmiseSearch:
    """Grid search plus one half-spacing refinement around the best grid point."""
    quad = quad or gauss_legendre()
    moments = moments or kernel_moments(quad)
    var_u = model.variance if var_u is None else var_u
    sx, sy, rho = amise_plugins(sample, var_u)
    n = sample.n
    scale = n ** (-1.0 / 6.0)
    base = np.geomspace(0.05, 2.0, n_grid)
    gw, gy = base * sx * scale, base * sy * scale

    cache = {}
    inverse_sq = {}

    def f(hw, hy):
        key = (hw, hy)
        if key not in cache:
            with np.errstate(over="ignore", invalid="ignore"):
                if hw not in inverse_sq:
                    inverse_sq[hw] = _inverse_sq_integral(model, hw, quad)
                cache[key] = amise_objective(hw, hy, n, model, sx, sy, rho, moments, quad,
                                             inverse_sq[hw])
        return cache[key]

    vals = np.array([[f(a, b) for b in gy] for a in gw])
    if not np.any(np.isfinite(vals)):
        raise NoFiniteCandidate("AMISE is non-finite on the whole grid")
    i, j = np.unravel_index(np.nanargmin(np.where(np.isfinite(vals), vals, np.nan)), vals.shape)
    half = math.sqrt(base[1] / base[0])
    for a in (gw[i] / half, gw[i], gw[i] * half):
        for b in (gy[j] / half, gy[j], gy[j] * half):
            f(a, b)
    points = np.array(list(cache.keys()))
    values = np.array(list(cache.values()))
    finite = np.where(np.isfinite(values), values, np.inf)
    best = int(np.argmin(finite))
    return AmiseSearch(float(points[best, 0]), float(points[best, 1]), rho, sx, sy, points, values)


def amise_hw_hy(sample, model, moments=None, quad=None, var_u=None):
    """Density bandwidths ``(h_W, h_Y)`` minimizing the sample AMISE."""
    res = amise_search(sample, model, moments, quad, var_u)
    return res.h_w, res.h_y


def rule_of_thumb_density(w):
    """Gaussian KDE of ``W`` with bandwidth ``1.06 sd(W) n^(-1/5)``."""
    w = np.asarray(w, dtype=float)
    bw = 1.06 * np.std(w, ddof=1) * len(w) ** (-0.2)

    def density(x):
        z = (np.asarray(x, dtype=float)[..., None] - w) / bw
        return np.exp(-0.5 * z * z).sum(axis=-1) / (len(w) * bw * math.sqrt(2.0 * math.pi))

    return density


def simex_cv_curves(sample, model, params: TuningParams, tau0: float, h_grid, quad=None, seed=0):
    """Summed SIMEX criteria ``(sum_d CV*_d(h), sum_d CV**_d(h))`` over ``h_grid``."""
    if model.kind != "empirical" or model.m < 1:
        raise ValueError("SIMEX needs an empirical error model")
    n = sample.n
    weight = rule_of_thumb_density(sample.w)
    cv1 = np.zeros(len(h_grid))
    cv2 = np.zeros(len(h_grid))
    for d in range(params.D):
        rng = np.random.default_rng(np.random.SeedSequence([int(seed), d]))
        w1 = sample.w + rng.choice(model.aux, n, replace=True)
        w2 = w1 + rng.choice(model.aux, n, replace=True)
        folds = fold_indices(n, params.J, rng)
        wt1, wt2 = weight(sample.w), weight(w1)
        subs = [(fold, np.setdiff1d(np.arange(n), fold)) for fold in folds]
        subs = [(fold, train, sample.subset(train)) for fold, train in subs]
        for j, h in enumerate(h_grid):
            k1 = kernel_matrix(model, h, sample.w, w1, quad)
            k2 = kernel_matrix(model, h, w1, w2, quad)
            for fold, train, sub in subs:
                t1 = fit_from_weights(k1[np.ix_(fold, train)], sub, [tau0])[:, 0]
                t2 = fit_from_weights(k2[np.ix_(fold, train)], sub, [tau0])[:, 0]
                cv1[j] += np.sum(check_loss(tau0, sample.y[fold] - t1) * wt1[fold])
                cv2[j] += np.sum(check_loss(tau0, sample.y[fold] - t2) * wt2[fold])
    return cv1, cv2


def simex_extrapolate(h_star: float, h_star2: float) -> float:
    """``(h**)^2 / h*``."""
    return h_star2**2 / h_star


def simex_pilot(sample, model, params: TuningParams, tau0: float, quad=None, seed=0, h_grid=None) -> float:
    h_grid = np.asarray(h_grid if h_grid is not None else
                        (params.h_grid or default_h_grid(sample.w, params.n_h)))
    cv1, cv2 = simex_cv_curves(sample, model, params, tau0, h_grid, quad, seed)
    h1 = _argmin_finite(cv1, h_grid, "simex CV*")
    h2 = _argmin_finite(cv2, h_grid, "simex CV**")
    return simex_extrapolate(h1, h2)


def select_bandwidths(sample, model, params: TuningParams, grid, quad=None, pilot: str = "cv",
                      x_region=None, seed=None, h_opt=None, h_w=None, h_y=None,
                      h=None) -> BandwidthPlan:
    """Full pipeline: pilot, undersmoothing, weighting and density bandwidths.

    Explicit ``h_opt``, ``h_w`` or ``h_y`` skip the corresponding search; an
    explicit ``h`` skips both the pilot and the undersmoothing step.
    """
    tau0 = 0.5 * (grid.tau_points[0] + grid.tau_points[-1])
    h_grid = np.asarray(params.h_grid or default_h_grid(sample.w, params.n_h))
    b = select_weight_bandwidth(model, sample.w, quad)
    if h is not None:
        h_opt = h / params.zeta if h_opt is None else h_opt
        provenance = "manual"
    elif h_opt is not None:
        provenance = "manual"
    elif pilot == "cv":
        curve = cv_curve(sample, model, params, tau0, h_grid, x_region, quad, b=b)
        h_opt = _argmin_finite(curve, h_grid, "cv_pilot")
        provenance = "cv"
    elif pilot == "simex":
        h_opt = simex_pilot(sample, model, params, tau0, quad,
                            params.seed if seed is None else seed, h_grid)
        provenance = "simex"
    else:
        raise ValueError(f"unknown pilot {pilot!r}")
    if h is None:
        h, k = undersmooth(sample, model, h_opt, params, grid, quad)
    else:
        k = params.L
    if h_w is None or h_y is None:
        aw, ay = amise_hw_hy(sample, model, quad=quad)
        h_w = aw if h_w is None else h_w
        h_y = ay if h_y is None else h_y
    return BandwidthPlan(h=float(h), h_opt=float(h_opt), h_w=float(h_w), h_y=float(h_y), b=float(b),
                         provenance=provenance, k=int(k), L=params.L, zeta=params.zeta,
                         h_grid=[float(v) for v in h_grid])
