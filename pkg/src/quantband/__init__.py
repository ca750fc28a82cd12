"""Deconvolution quantile regression with multiplier-bootstrap uniform bands."""

__version__ = "0.1.0"

from .bands import BootstrapConfig, UniformBand, bootstrap_thetas, build_bands, critical_value
from .bandwidth import BandwidthPlan, TuningParams, select_bandwidths
from .deconv import ErrorModel, QuadratureRule, base_kernel, deconv_kernel, gauss_legendre
from .estimator import EvalGrid, PrimarySample, QuantileGridFit, fit_grid, fit_point
from .variance import VarianceConfig, joint_density, sigma_hat

__all__ = [
    "BandwidthPlan", "BootstrapConfig", "ErrorModel", "EvalGrid", "PrimarySample",
    "QuadratureRule", "QuantileGridFit", "TuningParams", "UniformBand", "VarianceConfig",
    "base_kernel", "bootstrap_thetas", "build_bands", "critical_value", "deconv_kernel",
    "fit_grid", "fit_point", "gauss_legendre", "joint_density", "select_bandwidths", "sigma_hat",
]
