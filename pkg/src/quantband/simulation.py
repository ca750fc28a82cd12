"""Monte Carlo coverage studies for the uniform bands.

Design: ``X ~ N(0, 1)``, ``eps ~ N(0, 1)``, ``W = X + U`` with Laplace or
Gaussian ``U`` scaled to a target ``var(U) / var(X)``, and three regression
functions (linear, quadratic, sine). Each replication runs the full
bandwidth pipeline with an empirical error model fitted to an auxiliary error
sample, then checks whether the bands contain the true quantile curve at
every grid cell.
"""

from __future__ import annotations

import csv
import io
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.stats import norm

from .bands import BootstrapConfig, bootstrap_thetas, build_bands
from .bandwidth import TuningParams, select_bandwidths
from .deconv import ErrorModel
from .errors import QuantBandError
from .estimator import EvalGrid, PrimarySample, fit_grid
from .variance import VarianceConfig, sigma_hat

logger = logging.getLogger(__name__)

DGPS = ("linear", "quadratic", "sine")
ERROR_RATIOS = {"laplace": 0.25, "gaussian": 0.2}

CSV_COLUMNS = ["dgp", "error", "n", "alpha", "tau_lo", "tau_hi", "ecp_uniform", "size_uniform",
               "ecp_pointwise", "size_pointwise", "reps", "failures"]


@dataclass(frozen=True)
class SimConfig:
    dgp: str = "linear"
    error: str = "laplace"
    n: int = 250
    m: int | None = None
    reps: int = 200
    boot: BootstrapConfig = field(default_factory=lambda: BootstrapConfig(B=200, alpha=(0.10,)))
    tuning: TuningParams = field(default_factory=TuningParams)
    x_region: tuple = (-0.8, 0.8)
    tau_region: tuple = (0.2, 0.3)
    nx: int = 41
    ntau: int = 6
    ratio: float | None = None
    master_seed: int = 20240101
    threads: int = 1

    def __post_init__(self):
        if self.dgp not in DGPS:
            raise ValueError(f"dgp must be one of {DGPS}")
        if self.error not in ERROR_RATIOS:
            raise ValueError(f"error must be one of {tuple(ERROR_RATIOS)}")
        if self.reps < 1 or self.n < 2:
            raise ValueError("need reps >= 1 and n >= 2")
        if self.error_ratio <= 0:
            raise ValueError("ratio must be positive")
        lo, hi = self.tau_region
        if not 0 < lo <= hi < 1:
            raise ValueError("tau_region must satisfy 0 < lo <= hi < 1")

    @property
    def error_ratio(self) -> float:
        return ERROR_RATIOS[self.error] if self.ratio is None else float(self.ratio)

    @property
    def aux_size(self) -> int:
        return self.n if self.m is None else int(self.m)

    def grid(self) -> EvalGrid:
        return EvalGrid.regular(self.x_region, self.tau_region, self.nx, self.ntau)

    def to_dict(self):
        d = asdict(self)
        d["m"] = self.aux_size
        d["ratio"] = self.error_ratio
        return d


def true_quantile(dgp: str, tau, x):
    """Conditional ``tau``-quantile of ``Y`` given ``X = x``."""
    q = norm.ppf(tau)
    x = np.asarray(x, dtype=float)
    if dgp == "linear":
        out = x + q
    elif dgp == "quadratic":
        out = x * x + q
    elif dgp == "sine":
        out = np.sin(x) + 0.5 * q
    else:
        raise ValueError(f"unknown dgp {dgp!r}")
    return out if np.ndim(out) else float(out)


def error_scale(error: str, ratio: float) -> float:
    """Laplace scale or Gaussian sd giving ``var(U) = ratio`` (``var(X) = 1``)."""
    if error == "laplace":
        return math.sqrt(ratio / 2.0)
    if error == "gaussian":
        return math.sqrt(ratio)
    raise ValueError(f"unknown error law {error!r}")


def draw_errors(error: str, ratio: float, size: int, rng: np.random.Generator) -> np.ndarray:
    scale = error_scale(error, ratio)
    if error == "laplace":
        return rng.laplace(0.0, scale, size)
    return rng.normal(0.0, scale, size)


def replication_seed(config: SimConfig, rep_index: int, stream: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(config.master_seed), int(rep_index), int(stream)])


def gen_replication(config: SimConfig, rep_index: int):
    rng = np.random.default_rng(replication_seed(config, rep_index, 0))
    n = config.n
    x = rng.standard_normal(n)
    eps = rng.standard_normal(n)
    u = draw_errors(config.error, config.error_ratio, n, rng)
    aux = draw_errors(config.error, config.error_ratio, config.aux_size, rng)
    if config.dgp == "linear":
        y = x + eps
    elif config.dgp == "quadratic":
        y = x * x + eps
    else:
        y = np.sin(x) + 0.5 * eps
    return PrimarySample(x + u, y), aux


def region_measure(config_or_grid) -> float:
    """Measure of the covariate region; band widths are averaged over quantile levels."""
    x = config_or_grid.x_points
    return float(x[-1] - x[0])


def band_size(lower, upper, x_measure: float) -> float:
    """Mean width over the grid times the covariate range (midpoint rule)."""
    width = np.asarray(upper, dtype=float) - np.asarray(lower, dtype=float)
    width = width[~np.isnan(width)]
    if width.size == 0:
        return float("nan")
    return float(np.mean(width) * x_measure)


def covers(lower, upper, truth) -> bool:
    ok = ~np.isnan(lower) & ~np.isnan(upper)
    return bool(np.all((lower[ok] <= truth[ok]) & (truth[ok] <= upper[ok])))


@dataclass
class ReplicationResult:
    rep_index: int
    ok: bool
    records: dict = field(default_factory=dict)
    invalid_cells: int = 0
    plan: dict | None = None
    error: str | None = None


def analyze_replication(sample, aux, config: SimConfig, rep_index: int, quad=None):
    """Bandwidths, fit, standard errors and bands for one simulated dataset."""
    model = ErrorModel.empirical(aux)
    grid = config.grid()
    tuning = TuningParams(**{**asdict(config.tuning),
                             "seed": int(replication_seed(config, rep_index, 1).generate_state(1)[0])})
    plan = select_bandwidths(sample, model, tuning, grid, quad)
    fit = fit_grid(sample, model, plan.h, grid, quad)
    sigma_hat(sample, model, fit, VarianceConfig(plan.h_w, plan.h_y), quad)
    boot_seed = int(replication_seed(config, rep_index, 2).generate_state(1)[0])
    boot_cfg = BootstrapConfig(B=config.boot.B, alpha=config.boot.alpha, seed=boot_seed)
    boot = bootstrap_thetas(fit, sample, boot_cfg)
    band = build_bands(fit, boot, boot_cfg)
    return plan, fit, band


def evaluate_band(band, fit, config: SimConfig):
    grid = fit.grid
    truth = true_quantile(config.dgp, grid.tau_points[None, :], grid.x_points[:, None])
    measure = region_measure(grid)
    records = {}
    for a in band.alpha:
        lo, hi = band.lower_two[a], band.upper_two[a]
        plo, phi = band.pointwise(a)
        records[a] = {
            "covered_uniform": covers(lo, hi, truth),
            "size_uniform": band_size(lo, hi, measure),
            "covered_pointwise": covers(plo, phi, truth),
            "size_pointwise": band_size(plo, phi, measure),
            "pointwise_dominated": bool(np.all(band.pointwise_c2[a][fit.valid] <= band.c2[a])),
        }
    return records


def run_replication(config: SimConfig, rep_index: int, quad=None) -> ReplicationResult:
    sample, aux = gen_replication(config, rep_index)
    try:
        plan, fit, band = analyze_replication(sample, aux, config, rep_index, quad)
    except QuantBandError as exc:
        logger.warning("replication %d failed: %s", rep_index, exc)
        return ReplicationResult(rep_index, False, error=f"{type(exc).__name__}: {exc}")
    return ReplicationResult(rep_index, True, evaluate_band(band, fit, config), fit.n_invalid,
                             plan.to_dict())


@dataclass
class SimReport:
    config: SimConfig
    rows: dict
    reps_completed: int
    failures: int
    invalid_cells_total: int
    results: list = field(default_factory=list, repr=False)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for row in self.csv_rows():
            writer.writerow(row)
        return buf.getvalue()

    def csv_rows(self):
        c = self.config
        for a, r in self.rows.items():
            yield [c.dgp, c.error, c.n, repr(a), repr(float(c.tau_region[0])), repr(float(c.tau_region[1])),
                   repr(r["ecp_uniform"]), repr(r["size_uniform"]), repr(r["ecp_pointwise"]),
                   repr(r["size_pointwise"]), self.reps_completed, self.failures]


def aggregate(config: SimConfig, results) -> SimReport:
    done = [r for r in results if r.ok]
    rows = {}
    for a in config.boot.alpha:
        recs = [r.records[a] for r in done]

        def mean_finite(key):
            vals = np.array([rec[key] for rec in recs], dtype=float)
            vals = vals[np.isfinite(vals)]
            return float(vals.mean()) if vals.size else float("nan")

        rows[a] = {
            "ecp_uniform": float(np.mean([rec["covered_uniform"] for rec in recs])) if recs else float("nan"),
            "size_uniform": mean_finite("size_uniform"),
            "ecp_pointwise": float(np.mean([rec["covered_pointwise"] for rec in recs])) if recs else float("nan"),
            "size_pointwise": mean_finite("size_pointwise"),
        }
    return SimReport(config, rows, len(done), len(results) - len(done),
                     sum(r.invalid_cells for r in done), list(results))


def run_study(config: SimConfig, threads: int | None = None, progress=None) -> SimReport:
    threads = config.threads if threads is None else threads
    reps = range(config.reps)
    if threads <= 1:
        results = []
        for i in reps:
            results.append(run_replication(config, i))
            if progress:
                progress(i)
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(lambda i: run_replication(config, i), reps))
    return aggregate(config, results)
