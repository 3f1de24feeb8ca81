"""Hierarchical horseshoe-prior Gibbs sampling for edge-preserving linear
Bayesian inversion."""

from .exceptions import (
    ConfigError,
    FactorizationError,
    InvalidDimensionError,
    InvalidParameterError,
)
from .prior import HorseshoeParams, HyperState
from .sampler import ChainStore, GibbsConfig, run_gibbs

__all__ = [
    "ConfigError",
    "FactorizationError",
    "InvalidDimensionError",
    "InvalidParameterError",
    "HorseshoeParams",
    "HyperState",
    "ChainStore",
    "GibbsConfig",
    "run_gibbs",
]

__version__ = "0.1.0"
