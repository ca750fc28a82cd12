"""Command-line interface: ``quantband {fit,simulate,bandwidth,kernel-dump}``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import __version__
from .bands import BootstrapConfig, bootstrap_thetas, build_bands
from .bandwidth import TuningParams, select_bandwidths
from .deconv import ErrorModel, _real_part, clamp_count, deconv_kernel_complex, gauss_legendre
from .errors import ConfigError, InputError, NumericalError, QuantBandError
from .estimator import EvalGrid, fit_grid
from .io import (FitRequest, fmt, header_comment, ingest, parse_error_model, read_columns,
                 write_band_csv, write_band_svg, write_json)
from .simulation import DGPS, ERROR_RATIOS, SimConfig, run_study
from .variance import VarianceConfig, sigma_hat

logger = logging.getLogger("quantband")

EXIT_OK, EXIT_INPUT, EXIT_NUMERICAL = 0, 2, 3
DEFAULT_LOG_SHIFT = 5.0


def _pair(text):
    try:
        lo, hi = (float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected LO,HI, got {text!r}") from None
    if lo > hi:
        raise argparse.ArgumentTypeError(f"LO must not exceed HI in {text!r}")
    return lo, hi


def _floats(text):
    try:
        return tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _default_threads():
    raw = os.environ.get("QUANTBAND_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def _add_data_args(p):
    p.add_argument("data", help="primary CSV with header y,w (or y,w1,w2 with --repeated)")
    src = p.add_argument_group("error source (exactly one)")
    src.add_argument("--aux", dest="aux_path", help="auxiliary error sample CSV with header u")
    src.add_argument("--repeated", action="store_true", help="data holds two replicate measurements w1,w2")
    src.add_argument("--error-model", help="known error law: laplace:B, gaussian:SD or none")
    p.add_argument("--log-shift", type=float, nargs="?", const=DEFAULT_LOG_SHIFT, default=None,
                   help=f"repeated mode only: use log(w + SHIFT) (default shift {DEFAULT_LOG_SHIFT:g})")
    p.add_argument("--tau-region", type=_pair, default=(0.25, 0.75), metavar="LO,HI")
    p.add_argument("--x-region", type=_pair, default=None, metavar="LO,HI",
                   help="covariate range (default: range of W; an interior range is recommended)")
    p.add_argument("--nx", type=int, default=41)
    p.add_argument("--ntau", type=int, default=11)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--pilot", choices=("cv", "simex"), default="cv")
    p.add_argument("--h", type=float, default=None, help="final bandwidth (skips pilot and undersmoothing)")
    p.add_argument("--h-opt", type=float, default=None, help="pilot bandwidth (skips the pilot search)")
    p.add_argument("--h-w", type=float, default=None)
    p.add_argument("--h-y", type=float, default=None)
    p.add_argument("--zeta", type=float, default=1.3)
    p.add_argument("--L", type=int, default=20)
    p.add_argument("--rho", type=float, default=3.0)
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--threads", type=int, default=_default_threads(),
                   help="worker threads (default: $QUANTBAND_THREADS or 1)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="quantband", description=__doc__)
    parser.add_argument("--version", action="version", version=f"quantband {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    fit = sub.add_parser("fit", help="estimate quantile curves and uniform bands")
    _add_data_args(fit)
    fit.add_argument("--alpha", type=_floats, default=(0.10, 0.05), metavar="A1,A2,...")
    fit.add_argument("--B", type=int, default=1000, help="bootstrap replicates")
    fit.add_argument("--plot-tau", type=_floats, default=(), metavar="T1,T2,...",
                     help="quantile levels to draw in an SVG per alpha")
    fit.add_argument("--out-dir", default=".")
    fit.add_argument("--prefix", default="quantband")

    bw = sub.add_parser("bandwidth", help="print the bandwidth plan as JSON")
    _add_data_args(bw)

    sim = sub.add_parser("simulate", help="run a Monte Carlo coverage study from a JSON config")
    sim.add_argument("config", help="JSON file with study settings")
    sim.add_argument("--out", default="study.csv", help="study CSV (a .json sidecar is written next to it)")
    sim.add_argument("--threads", type=int, default=_default_threads())

    kd = sub.add_parser("kernel-dump", help="tabulate the deconvolution kernel")
    kd.add_argument("model", help="laplace:B, gaussian:SD, none or aux:PATH")
    kd.add_argument("--h", type=float, required=True)
    kd.add_argument("--x", type=_floats, default=None, metavar="X1,X2,...")
    kd.add_argument("--x-range", type=_pair, default=(-3.0, 3.0), metavar="LO,HI")
    kd.add_argument("--n", type=int, default=61, help="points in --x-range when --x is absent")
    kd.add_argument("--out", default="-", help="output CSV path ('-' for stdout)")
    return parser


def request_from_args(args) -> FitRequest:
    return FitRequest(
        data_path=args.data, aux_path=args.aux_path, repeated=args.repeated, log_shift=args.log_shift,
        error_model=args.error_model, alpha=tuple(getattr(args, "alpha", (0.10, 0.05))),
        tau_region=args.tau_region, x_region=args.x_region, nx=args.nx, ntau=args.ntau,
        B=getattr(args, "B", 1000), seed=args.seed, h=args.h, h_opt=args.h_opt, h_w=args.h_w,
        h_y=args.h_y, pilot=args.pilot, threads=args.threads,
        plot_tau=tuple(getattr(args, "plot_tau", ())), out_dir=getattr(args, "out_dir", "."),
        tuning={"zeta": args.zeta, "L": args.L, "rho": args.rho, "J": args.folds},
    )


def _prepare(request: FitRequest):
    sample, model = ingest(request)
    x_region = request.x_region or (float(sample.w.min()), float(sample.w.max()))
    try:
        grid = EvalGrid.regular(x_region, request.tau_region, request.nx, request.ntau)
        params = TuningParams(seed=request.seed, **request.tuning)
    except ValueError as exc:
        raise InputError(str(exc)) from None
    plan = select_bandwidths(sample, model, params, grid, pilot=request.pilot, x_region=x_region,
                             seed=request.seed, h_opt=request.h_opt, h_w=request.h_w,
                             h_y=request.h_y, h=request.h)
    return sample, model, grid, plan


def fit_command(request: FitRequest, prefix: str = "quantband") -> dict:
    """Run the full pipeline and write band CSVs, a JSON summary and optional SVGs."""
    try:
        boot_cfg = BootstrapConfig(B=request.B, alpha=request.alpha, seed=request.seed)
    except ValueError as exc:
        raise InputError(str(exc)) from None
    sample, model, grid, plan = _prepare(request)
    quad = gauss_legendre()
    fit = fit_grid(sample, model, plan.h, grid, quad)
    sigma_hat(sample, model, fit, VarianceConfig(plan.h_w, plan.h_y), quad)
    boot = bootstrap_thetas(fit, sample, boot_cfg)
    band = build_bands(fit, boot, boot_cfg)

    config = request.resolved()
    out = Path(request.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for a in boot_cfg.alpha:
        path = out / f"{prefix}_alpha{a:g}.csv"
        write_band_csv(path, band, a, config)
        written.append(path.name)
        if request.plot_tau:
            svg = out / f"{prefix}_alpha{a:g}.svg"
            write_band_svg(svg, band, a, request.plot_tau, config)
            written.append(svg.name)
    invalid = [{"x": float(grid.x_points[j]), "tau": float(grid.tau_points[k])}
               for j, k in zip(*np.nonzero(~fit.valid))]
    summary = {
        "version": __version__,
        "config": config,
        "seed": request.seed,
        "error_model": model.describe(),
        "n": sample.n,
        "bandwidth_plan": plan.to_dict(),
        "grid": {"x_region": [float(grid.x_points[0]), float(grid.x_points[-1])], "nx": grid.shape[0],
                 "tau_points": grid.tau_points.tolist()},
        "critical_values": {f"{a:g}": {"two_sided": band.c2[a], "one_sided": band.c1[a]}
                            for a in boot_cfg.alpha},
        "clamp_counts": {"h": clamp_count(model, plan.h, quad), "h_w": clamp_count(model, plan.h_w, quad)},
        "density_floor_hits": fit.density_floor_hits,
        "sigma_floor_hits": fit.sigma_floor_hits,
        "invalid_cells": invalid,
        "outputs": written,
    }
    write_json(out / f"{prefix}_summary.json", summary)
    for cell in invalid:
        logger.warning("estimate undefined at x=%g, tau=%g (kernel weights degenerate)",
                       cell["x"], cell["tau"])
    return summary


def _build(cls, data, path):
    """Instantiate a dataclass from a dict, reporting unknown or invalid fields by path."""
    if not isinstance(data, dict):
        raise ConfigError(path or "<root>", "expected a JSON object")
    names = {f.name for f in fields(cls)}
    for key in data:
        if key not in names:
            raise ConfigError(f"{path}{key}", "unknown field")
    return names


def sim_config_from_dict(data: dict) -> SimConfig:
    _build(SimConfig, data, "")
    kwargs = dict(data)
    kwargs.pop("threads", None)
    if "dgp" in kwargs and kwargs["dgp"] not in DGPS:
        raise ConfigError("dgp", f"must be one of {', '.join(DGPS)}, got {kwargs['dgp']!r}")
    if "error" in kwargs and kwargs["error"] not in ERROR_RATIOS:
        raise ConfigError("error", f"must be one of {', '.join(ERROR_RATIOS)}, got {kwargs['error']!r}")
    for key, cls in (("boot", BootstrapConfig), ("tuning", TuningParams)):
        if key in kwargs:
            _build(cls, kwargs[key], f"{key}.")
            try:
                kwargs[key] = cls(**kwargs[key])
            except (TypeError, ValueError) as exc:
                raise ConfigError(key, str(exc)) from None
    for key in ("x_region", "tau_region"):
        if key in kwargs:
            value = kwargs[key]
            if not (isinstance(value, list) and len(value) == 2):
                raise ConfigError(key, "expected [lo, hi]")
            kwargs[key] = tuple(float(v) for v in value)
    for key in ("n", "m", "reps", "nx", "ntau", "master_seed"):
        if key in kwargs and kwargs[key] is not None and not isinstance(kwargs[key], int):
            raise ConfigError(key, "expected an integer")
    try:
        return SimConfig(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError("<root>", str(exc)) from None


def simulate_command(config_path, out_path, threads: int = 1):
    try:
        with open(config_path, encoding="utf-8") as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError("<root>", f"invalid JSON at line {exc.lineno}: {exc.msg}") from None
    config = sim_config_from_dict(data)
    report = run_study(config, threads=threads)
    resolved = config.to_dict()
    resolved.pop("threads")
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    with open(out_path, "w", encoding="utf-8", newline="") as fh:
        fh.write(header_comment(resolved) + "\n")
        fh.write(report.to_csv())
    sidecar = out_path.with_suffix(".json")
    write_json(sidecar, {
        "version": __version__,
        "config": resolved,
        "reps_completed": report.reps_completed,
        "failures": report.failures,
        "invalid_cells_total": report.invalid_cells_total,
        "failed_reps": [{"rep": r.rep_index, "error": r.error} for r in report.results if not r.ok],
    })
    return report


def model_from_spec(spec: str) -> ErrorModel:
    if spec.startswith("aux:"):
        cols, _ = read_columns(spec[4:], [("u",)])
        try:
            return ErrorModel.empirical(cols["u"])
        except ValueError as exc:
            raise InputError(str(exc)) from None
    return parse_error_model(spec)


def kernel_dump_command(spec: str, h: float, xs, out) -> None:
    if not h > 0:
        raise InputError("--h must be positive")
    model = model_from_spec(spec)
    xs = np.asarray(xs, dtype=float)
    raw = deconv_kernel_complex(model, h, xs, clamp=True)
    # same residual check as the estimator
    values = _real_part(raw, "kernel-dump")
    writer = csv.writer(out, lineterminator="\n")
    out.write(header_comment({"model": spec, "h": h}) + "\n")
    writer.writerow(["x", "k_value", "imag_residual"])
    for x, v, c in zip(xs, values, raw):
        writer.writerow([fmt(x), fmt(v), fmt(abs(c.imag))])


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "fit":
            fit_command(request_from_args(args), args.prefix)
        elif args.command == "bandwidth":
            _, _, _, plan = _prepare(request_from_args(args))
            print(json.dumps(plan.to_dict(), indent=2, sort_keys=True))
        elif args.command == "simulate":
            simulate_command(args.config, args.out, max(1, args.threads))
        elif args.command == "kernel-dump":
            xs = args.x if args.x is not None else np.linspace(*args.x_range, args.n)
            if args.out == "-":
                kernel_dump_command(args.model, args.h, xs, sys.stdout)
            else:
                with open(args.out, "w", encoding="utf-8", newline="") as fh:
                    kernel_dump_command(args.model, args.h, xs, fh)
    except (InputError, FileNotFoundError, IsADirectoryError, PermissionError, UnicodeDecodeError) as exc:
        print(f"quantband: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (NumericalError, QuantBandError) as exc:
        print(f"quantband: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
