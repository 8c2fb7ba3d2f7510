"""Step-selection movement models with a dynamic one-dimensional feature.

The selection weight ``exp{-d^2 / (2 tau2)}`` of distance ``d`` to the
feature is linearised at the tangent line nearest the previous position,
which turns every step into a closed-form Gaussian product.
"""
from .errors import (ConfigError, DataError, FeatureAbsentError, FeatureStepError,
                     GridTooSmallError, ImproperProductError, NumericalError, ParameterError)
from .gausskit import GaussianFactor, ProperGaussian, compose, line_factor
from .geometry import DynamicFeature, OrientedLine, Polyline, nearest_point, tangent_at
from .movement import CS, SB, ModelParams, Track, log_path_likelihood, step_conditional
from .rsf import Season, linearize, rsf_exact, rsf_seasonal

__version__ = "0.1.0"

__all__ = [
    "CS", "SB", "ConfigError", "DataError", "DynamicFeature", "FeatureAbsentError",
    "FeatureStepError", "GaussianFactor", "GridTooSmallError", "ImproperProductError",
    "ModelParams", "NumericalError", "OrientedLine", "ParameterError", "Polyline",
    "ProperGaussian", "Season", "Track", "compose", "line_factor", "linearize",
    "log_path_likelihood", "nearest_point", "rsf_exact", "rsf_seasonal", "step_conditional",
    "tangent_at",
]
