"""Numerical toolkit for weighted p-Laplace equations with degenerate ellipticity."""

from .params import (
    ConfigError,
    ExponentConfig,
    RegimeTag,
    classify,
    counterexample_params,
    moser_constants,
    theta_from_st,
)

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "ExponentConfig",
    "RegimeTag",
    "classify",
    "counterexample_params",
    "moser_constants",
    "theta_from_st",
]
