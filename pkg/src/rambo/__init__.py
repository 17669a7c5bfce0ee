"""Regime-adaptive Bayesian optimization with a Dirichlet-process mixture of GPs."""

__version__ = "0.1.0"

from .errors import InputError, NumericalError
from .gp import (
    GpPosteriorCache,
    KernelHyperparams,
    ObservationSet,
    build_cache,
    gp_posterior,
    log_marginal_likelihood,
    mh_update_hyperparams,
    optimize_hyperparams,
    se_kernel,
)
from .prior import BaseMeasure, sample_base_measure

__all__ = [
    "__version__",
    "BaseMeasure",
    "GpPosteriorCache",
    "InputError",
    "KernelHyperparams",
    "NumericalError",
    "ObservationSet",
    "build_cache",
    "gp_posterior",
    "log_marginal_likelihood",
    "mh_update_hyperparams",
    "optimize_hyperparams",
    "sample_base_measure",
    "se_kernel",
]
