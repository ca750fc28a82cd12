"""CSV ingestion and artifact emission."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .deconv import ErrorModel
from .errors import EmptyData, InputError, ParseError, SchemaError
from .estimator import PrimarySample

BAND_COLUMNS = ["x", "tau", "theta_hat", "sigma_hat", "lo_two", "hi_two", "lo_left", "hi_right",
                "pt_lo", "pt_hi"]


@dataclass
class FitRequest:
    data_path: str
    aux_path: str | None = None
    repeated: bool = False
    log_shift: float | None = None
    error_model: str | None = None
    alpha: tuple = (0.10, 0.05)
    tau_region: tuple = (0.5, 0.5)
    x_region: tuple | None = None
    nx: int = 41
    ntau: int = 11
    B: int = 1000
    seed: int = 0
    h: float | None = None
    h_opt: float | None = None
    h_w: float | None = None
    h_y: float | None = None
    pilot: str = "cv"
    threads: int = 1
    plot_tau: tuple = ()
    out_dir: str = "."
    tuning: dict = field(default_factory=dict)

    def resolved(self) -> dict:
        """Settings that determine the results; scheduling and output location excluded."""
        d = dict(self.__dict__)
        d.pop("threads")
        d.pop("out_dir")
        return d


def fmt(value) -> str:
    """17 significant digits; round-trips every double."""
    value = float(value)
    if math.isnan(value):
        return "nan"
    if math.isinf(value):
        return "inf" if value > 0 else "-inf"
    return format(value, ".17g")


def header_comment(config: dict) -> str:
    return f"# quantband {__version__} config={json.dumps(config, sort_keys=True, default=str)}"


def _rows(path):
    """Yield ``(line_number, fields)`` skipping blank and ``#`` lines."""
    with open(path, newline="", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            yield lineno, next(csv.reader([stripped]))


def read_columns(path, allowed_headers):
    """Parse a numeric CSV whose header must equal one of ``allowed_headers``."""
    rows = _rows(path)
    try:
        lineno, header = next(rows)
    except StopIteration:
        raise EmptyData(f"{path}: file is empty") from None
    header = [h.strip().lower() for h in header]
    if header not in [list(h) for h in allowed_headers]:
        raise SchemaError(f"{path}: header {','.join(header)!r} not one of "
                          + " | ".join(",".join(h) for h in allowed_headers))
    cols = {name: [] for name in header}
    lines = []
    for lineno, fields in rows:
        if len(fields) != len(header):
            raise ParseError(f"{path}: expected {len(header)} fields, got {len(fields)}", lineno)
        for name, raw in zip(header, fields):
            try:
                value = float(raw.strip())
            except ValueError:
                raise ParseError(f"{path}: cannot parse {raw.strip()!r} as a number", lineno, name) from None
            if not math.isfinite(value):
                raise ParseError(f"{path}: non-finite value {raw.strip()!r}", lineno, name)
            cols[name].append(value)
        lines.append(lineno)
    if not lines:
        raise EmptyData(f"{path}: no data rows")
    return {k: np.array(v) for k, v in cols.items()}, np.array(lines)


def parse_error_model(spec: str) -> ErrorModel:
    """``laplace:b``, ``gaussian:sd`` or ``none``."""
    kind, _, arg = spec.partition(":")
    kind = kind.strip().lower()
    if kind == "none":
        return ErrorModel.no_error()
    try:
        value = float(arg)
    except ValueError:
        raise InputError(f"error model {spec!r}: expected laplace:<b> or gaussian:<sd>") from None
    try:
        if kind == "laplace":
            return ErrorModel.laplace(value)
        if kind == "gaussian":
            return ErrorModel.gaussian(value)
    except ValueError as exc:
        raise InputError(f"error model {spec!r}: {exc}") from None
    raise InputError(f"unknown error model {spec!r}")


def ingest(request: FitRequest):
    """Load the primary sample and build the error model.

    Repeated mode reads ``y,w1,w2``, optionally maps each measurement to
    ``log(w + shift)``, averages the two measurements and uses their half
    difference as the auxiliary error sample.
    """
    sources = [request.aux_path is not None, request.repeated, request.error_model is not None]
    if sum(sources) != 1:
        raise InputError("specify exactly one error source: --aux, --repeated or --error-model")
    if request.log_shift is not None and not request.repeated:
        raise InputError("--log-shift applies to repeated measurements only")
    if request.repeated:
        cols, lines = read_columns(request.data_path, [("y", "w1", "w2")])
        w1, w2 = cols["w1"], cols["w2"]
        if request.log_shift is not None:
            with np.errstate(invalid="ignore", divide="ignore"):
                w1 = np.log(w1 + request.log_shift)
                w2 = np.log(w2 + request.log_shift)
            for name, arr in (("w1", w1), ("w2", w2)):
                bad = ~np.isfinite(arr)
                if bad.any():
                    raise ParseError(f"{request.data_path}: log({name} + {request.log_shift}) undefined",
                                     int(lines[bad][0]), name)
        w = 0.5 * (w1 + w2)
        aux = 0.5 * (w1 - w2)
        y = cols["y"]
        model = ErrorModel.empirical(aux)
    else:
        cols, _ = read_columns(request.data_path, [("y", "w"), ("w", "y")])
        w, y = cols["w"], cols["y"]
        if request.aux_path is not None:
            acols, _ = read_columns(request.aux_path, [("u",)])
            if len(acols["u"]) < 2:
                raise EmptyData(f"{request.aux_path}: need at least two auxiliary draws")
            model = ErrorModel.empirical(acols["u"])
        else:
            model = parse_error_model(request.error_model)
    if len(y) < 2:
        raise EmptyData("need at least two observations")
    return PrimarySample(w, y), model


def write_band_csv(path, band, alpha, config: dict):
    grid = band.grid
    pt_lo, pt_hi = band.pointwise(alpha)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(header_comment({**config, "alpha": alpha}) + "\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(BAND_COLUMNS)
        for j, x in enumerate(grid.x_points):
            for k, tau in enumerate(grid.tau_points):
                writer.writerow([fmt(v) for v in (
                    x, tau, band.theta_hat[j, k], band.sigma_hat[j, k],
                    band.lower_two[alpha][j, k], band.upper_two[alpha][j, k],
                    band.lower_left[alpha][j, k], band.upper_right[alpha][j, k],
                    pt_lo[j, k], pt_hi[j, k])])


def read_band_csv(path):
    cols, _ = _read_float_table(path)
    return cols


def _read_float_table(path):
    rows = list(_rows(path))
    header = rows[0][1]
    data = np.array([[float(v) for v in fields] for _, fields in rows[1:]])
    return {name: data[:, i] for i, name in enumerate(header)}, header


def write_json(path, payload):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, Path):
        return str(obj)
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")


def write_band_svg(path, band, alpha, tau_values, config: dict, truth=None):
    """Static plot: estimate with shaded two-sided band for each requested quantile slice."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    grid = band.grid
    with matplotlib.rc_context({"svg.hashsalt": "quantband", "svg.fonttype": "none"}):
        fig, ax = plt.subplots(figsize=(6, 4))
        for tau in tau_values:
            k = int(np.argmin(np.abs(grid.tau_points - tau)))
            x = grid.x_points
            ax.fill_between(x, band.lower_two[alpha][:, k], band.upper_two[alpha][:, k], alpha=0.25,
                            label=f"{1 - alpha:.0%} uniform band, tau={grid.tau_points[k]:.3g}")
            ax.plot(x, band.theta_hat[:, k], lw=1.5)
        ax.set_xlabel("x")
        ax.set_ylabel("conditional quantile")
        ax.legend(fontsize="small")
        fig.tight_layout()
        fig.savefig(path, format="svg", metadata={
            "Date": None,
            "Creator": f"quantband {__version__}",
            "Description": json.dumps(config, sort_keys=True, default=str),
        })
        plt.close(fig)
