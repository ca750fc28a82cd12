"""Characteristic functions, the base kernel and deconvolution kernels.

All kernels here are defined through their Fourier transform. The base kernel
has characteristic function ``phi_K(t) = (1 - t**2)**3`` on ``[-1, 1]``, so
every inversion integral lives on ``[-1, 1]`` and is evaluated with a
Gauss-Legendre rule. Oscillation grows with ``|x| / h``; evaluation points
beyond the resolution of the base rule are recomputed with a doubled rule.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy import special

from .errors import NonFiniteResult, RealValuednessError

logger = logging.getLogger(__name__)

DEFAULT_ORDER = 256
# |x/h| resolved accurately by a 256-node rule; scales linearly with order.
RESOLVED_FREQUENCY = 60.0
MAX_ORDER = 32768
IMAG_TOL = 1e-8


@dataclass(frozen=True, eq=False)
class QuadratureRule:
    """Gauss-Legendre nodes and weights on ``[-1, 1]``."""

    nodes: np.ndarray
    weights: np.ndarray

    @property
    def order(self) -> int:
        return len(self.nodes)

    @property
    def resolved_frequency(self) -> float:
        return RESOLVED_FREQUENCY * self.order / DEFAULT_ORDER


@lru_cache(maxsize=16)
def gauss_legendre(order: int = DEFAULT_ORDER) -> QuadratureRule:
    if order < 2:
        raise ValueError("quadrature order must be at least 2")
    nodes, weights = special.roots_legendre(order)
    # enforce exact antisymmetry of the nodes
    half = order // 2
    nodes[order - half:] = -nodes[:half][::-1]
    if order % 2:
        nodes[half] = 0.0
    weights[order - half:] = weights[:half][::-1]
    nodes.setflags(write=False)
    weights.setflags(write=False)
    return QuadratureRule(nodes, weights)


@dataclass(frozen=True)
class KernelMoments:
    kappa21: float
    l2norm: float


@dataclass(frozen=True, eq=False)
class ErrorModel:
    """Law of the additive measurement error ``U``.

    Use the constructors :meth:`laplace`, :meth:`gaussian`, :meth:`empirical`
    and :meth:`no_error` rather than the raw initializer.
    """

    kind: str
    scale: float = 0.0
    aux: np.ndarray | None = field(default=None, repr=False)
    clamp_floor: float = 0.0
    smoothness: tuple | None = None

    @classmethod
    def laplace(cls, b: float) -> ErrorModel:
        if not b > 0:
            raise ValueError("Laplace scale must be positive")
        return cls("laplace", float(b), None, 0.0, ("ordinary", 2.0))

    @classmethod
    def gaussian(cls, sd: float) -> ErrorModel:
        if not sd > 0:
            raise ValueError("Gaussian sd must be positive")
        return cls("gaussian", float(sd), None, 0.0, ("supersmooth", 2.0, 0.0))

    @classmethod
    def empirical(cls, aux, clamp_floor: float | None = None) -> ErrorModel:
        u = np.array(aux, dtype=float).ravel()
        if u.size < 2:
            raise ValueError("empirical error model needs at least 2 draws")
        if not np.all(np.isfinite(u)):
            raise ValueError("auxiliary error sample contains non-finite values")
        if clamp_floor is None:
            clamp_floor = u.size ** -0.5
        if clamp_floor < 0:
            raise ValueError("clamp_floor must be nonnegative")
        u.setflags(write=False)
        return cls("empirical", 0.0, u, float(clamp_floor), None)

    @classmethod
    def no_error(cls) -> ErrorModel:
        """Degenerate empirical model ``U = 0``; deconvolution reduces to smoothing."""
        u = np.zeros(1)
        u.setflags(write=False)
        return cls("empirical", 0.0, u, 0.0, None)

    @property
    def m(self) -> int:
        return 0 if self.aux is None else len(self.aux)

    @property
    def variance(self) -> float:
        if self.kind == "laplace":
            return 2.0 * self.scale**2
        if self.kind == "gaussian":
            return self.scale**2
        if self.m < 2:
            return 0.0
        return float(np.var(self.aux, ddof=1))

    def describe(self) -> str:
        if self.kind == "empirical":
            return f"empirical(m={self.m}, clamp_floor={self.clamp_floor!r})"
        return f"{self.kind}({self.scale!r})"

    def charfn(self, t):
        return charfn(self, t)


def fourier_kernel(t):
    """Characteristic function of the base kernel, ``(1 - t^2)^3`` on ``[-1, 1]``."""
    t = np.asarray(t, dtype=float)
    out = np.where(np.abs(t) <= 1.0, (1.0 - t * t) ** 3, 0.0)
    return out if out.ndim else float(out)


def charfn(model: ErrorModel, t):
    t = np.asarray(t, dtype=float)
    if model.kind == "laplace":
        out = (1.0 / (1.0 + (model.scale * t) ** 2)).astype(complex)
    elif model.kind == "gaussian":
        out = np.exp(-0.5 * (model.scale * t) ** 2).astype(complex)
    elif model.kind == "empirical":
        arg = np.multiply.outer(t, model.aux)
        out = np.cos(arg).mean(axis=-1) + 1j * np.sin(arg).mean(axis=-1)
    else:
        raise ValueError(f"unknown error model kind {model.kind!r}")
    return out if out.ndim else complex(out)


def _reciprocal_charfn(model: ErrorModel | None, s: np.ndarray, clamp: bool = True):
    """``1 / phi_U(s)`` with the magnitude floor applied; returns (values, n_clamped)."""
    if model is None:
        return np.ones(s.shape, dtype=complex), 0
    with np.errstate(over="ignore"):
        if model.kind == "laplace":
            return (1.0 + (model.scale * s) ** 2).astype(complex), 0
        if model.kind == "gaussian":
            return np.exp(0.5 * (model.scale * s) ** 2).astype(complex), 0
    d = charfn(model, s)
    n_clamped = 0
    if clamp and model.clamp_floor > 0:
        mag = np.abs(d)
        low = mag < model.clamp_floor
        n_clamped = int(low.sum())
        if n_clamped:
            d = d.copy()
            nz = low & (mag > 0)
            d[nz] = d[nz] * (model.clamp_floor / mag[nz])
            d[low & (mag == 0)] = model.clamp_floor
    with np.errstate(divide="ignore", invalid="ignore"):
        return 1.0 / d, n_clamped


def _coefficients(model, h, rule, clamp=True):
    t = rule.nodes
    recip, n_clamped = _reciprocal_charfn(model, t / h, clamp)
    with np.errstate(invalid="ignore", over="ignore"):
        return rule.weights * fourier_kernel(t) * recip / (2.0 * math.pi * h), n_clamped


def clamp_count(model: ErrorModel, h: float, quad: QuadratureRule | None = None) -> int:
    """Number of quadrature nodes whose denominator hits the magnitude floor."""
    quad = quad or gauss_legendre()
    return _reciprocal_charfn(model, quad.nodes / h)[1]


def _required_orders(z, quad):
    """Per-entry quadrature order: the base order doubled until ``|z|`` is resolved."""
    ratio = np.abs(z) / quad.resolved_frequency
    with np.errstate(divide="ignore"):
        steps = np.ceil(np.log2(np.maximum(ratio, 1.0)))
    orders = quad.order * np.exp2(steps)
    return np.minimum(orders, max(MAX_ORDER, quad.order)).astype(np.int64)


def inversion_matrix(model, h, a, b, quad=None, clamp=True):
    """Complex matrix with entries ``(1/2 pi h) int exp(-i t (a_j - b_i)/h) phi_K(t)/phi_U(t/h) dt``.

    ``model=None`` gives the plain base kernel ``K_h``. The exponential is
    factored as ``exp(-i t a/h) exp(i t b/h)`` so the sum over nodes is a
    matrix product.
    """
    quad = quad or gauss_legendre()
    a = np.atleast_1d(np.asarray(a, dtype=float))
    b = np.atleast_1d(np.asarray(b, dtype=float))
    if not h > 0:
        raise ValueError("bandwidth must be positive")
    z = np.subtract.outer(a, b) / h
    orders = _required_orders(z, quad)
    out = np.empty(z.shape, dtype=complex)
    total_clamped = 0
    for order in np.unique(orders):
        rule = quad if order == quad.order else gauss_legendre(int(order))
        mask = orders == order
        rows = np.flatnonzero(mask.any(axis=1))
        cols = np.flatnonzero(mask.any(axis=0))
        coef, n_clamped = _coefficients(model, h, rule, clamp)
        total_clamped += n_clamped
        ea = np.exp(-1j * np.multiply.outer(a[rows] / h, rule.nodes)) * coef
        eb = np.exp(1j * np.multiply.outer(b[cols] / h, rule.nodes))
        block = ea @ eb.T
        sub = mask[np.ix_(rows, cols)]
        out[np.ix_(rows, cols)] = np.where(sub, block, out[np.ix_(rows, cols)])
    if total_clamped:
        logger.debug("clamped %d denominator nodes at h=%g", total_clamped, h)
    if not np.all(np.isfinite(out)):
        raise NonFiniteResult(
            f"non-finite deconvolution kernel value at h={h!r} ({model.describe() if model else 'K'})"
        )
    return out


def _real_part(values, what):
    re = values.real
    resid = np.abs(values.imag)
    bad = resid > IMAG_TOL * (1.0 + np.abs(re))
    if np.any(bad):
        raise RealValuednessError(
            f"{what}: imaginary residual {resid[bad].max():.3g} exceeds tolerance"
        )
    return re


def kernel_matrix(model, h, a, b, quad=None):
    """Real matrix ``K_{U,h}(a_j - b_i)``; ``model=None`` gives ``K_h``."""
    return _real_part(inversion_matrix(model, h, a, b, quad), "kernel matrix")


def _as_output(values, like):
    return values if np.ndim(like) else float(values[0])


def base_kernel(x, quad=None):
    """Base kernel ``K(x)``, the inverse Fourier transform of :func:`fourier_kernel`."""
    vals = kernel_matrix(None, 1.0, np.ravel(x), 0.0, quad)[:, 0]
    return _as_output(vals.reshape(np.shape(x)) if np.ndim(x) else vals, x)


def deconv_kernel_complex(model, h, x, quad=None, clamp=True):
    """Raw complex quadrature of the deconvolution kernel (for diagnostics)."""
    vals = inversion_matrix(model, h, np.ravel(x), 0.0, quad, clamp)[:, 0]
    return vals.reshape(np.shape(x)) if np.ndim(x) else complex(vals[0])


def deconv_kernel(model: ErrorModel, h: float, x, quad=None):
    """Deconvolution kernel ``K_{U,h}(x)``.

    Raises NonFiniteResult when a quadrature node overflows (typically a
    known supersmooth model with very small ``h``) and RealValuednessError if
    the imaginary part is not negligible.
    """
    vals = kernel_matrix(model, h, np.ravel(x), 0.0, quad)[:, 0]
    return _as_output(vals.reshape(np.shape(x)) if np.ndim(x) else vals, x)


def deconv_weights(model, h, x, w_obs, quad=None):
    """Weights ``K_{U,h}(x - W_i)`` for a single evaluation point."""
    return kernel_matrix(model, h, [x], w_obs, quad)[0]


def kernel_moments(quad=None) -> KernelMoments:
    quad = quad or gauss_legendre()
    step = 1e-4
    second = (fourier_kernel(step) - 2.0 * fourier_kernel(0.0) + fourier_kernel(-step)) / step**2
    l2 = float(np.sum(quad.weights * fourier_kernel(quad.nodes) ** 2)) / (2.0 * math.pi)
    return KernelMoments(kappa21=-second, l2norm=l2)
