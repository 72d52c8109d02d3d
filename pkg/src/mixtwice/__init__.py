"""Empirical-Bayes mixing over effects and variances for large-scale testing."""

from ._validation import (
    ConfigurationError,
    DegenerateRangeError,
    InvalidInputError,
    NumericalDegeneracyError,
)
from .densities import (
    ComponentTensor,
    UnitStats,
    build_component_tensor,
    normal_density,
    scaled_chisq_density,
    unit_likelihood,
)
from .estimator import (
    FitOptions,
    FitReport,
    MixingPair,
    fit,
    fit_tensor,
    gradient,
    hessian,
    neg_log_likelihood,
    subsample_fit,
)
from .grids import EffectGrid, VarianceGrid, build_effect_grid, build_variance_grid
from .inference import DiscoveryList, PosteriorTable, discovery_list, pi0_estimate, posterior
from .model import MixTwice

__version__ = "0.1.0"

__all__ = [
    "ComponentTensor",
    "ConfigurationError",
    "DegenerateRangeError",
    "DiscoveryList",
    "EffectGrid",
    "FitOptions",
    "FitReport",
    "InvalidInputError",
    "MixTwice",
    "MixingPair",
    "NumericalDegeneracyError",
    "PosteriorTable",
    "UnitStats",
    "VarianceGrid",
    "build_component_tensor",
    "build_effect_grid",
    "build_variance_grid",
    "discovery_list",
    "fit",
    "fit_tensor",
    "gradient",
    "hessian",
    "neg_log_likelihood",
    "normal_density",
    "pi0_estimate",
    "posterior",
    "scaled_chisq_density",
    "subsample_fit",
    "unit_likelihood",
]
