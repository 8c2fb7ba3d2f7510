"""Distance-to-feature selection weight, its seasonal form and its tangent-line factor."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ParameterError
from .gausskit import GaussianFactor, line_factor
from .geometry import FeatureDay, as_point, distance_to_feature, tangent_at

DAYS_PER_YEAR = 365


@dataclass(frozen=True)
class Season:
    """Open day-of-year window ``(a, b)`` during which the feature matters."""

    a: float
    b: float

    def __post_init__(self):
        a, b = float(self.a), float(self.b)
        if not (0.0 <= a < DAYS_PER_YEAR and 0.0 <= b < DAYS_PER_YEAR):
            raise ParameterError(f"season endpoints must lie in [0, 365): ({a}, {b})")
        if not a < b:
            raise ParameterError(f"season start must precede its end: ({a}, {b})")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)

    def contains(self, t) -> bool | np.ndarray:
        doy = day_of_year(t)
        return (self.a < doy) & (doy < self.b)


def day_of_year(t):
    return np.mod(t, DAYS_PER_YEAR)


def _check_tau2(tau2: float) -> None:
    if not tau2 > 0.0:
        raise ParameterError(f"tau2 must be positive, got {tau2!r}")


def rsf_exact(p, feature_day: FeatureDay, tau2: float):
    """``exp{-d^2 / (2 tau2)}`` with ``d`` the distance to the feature.

    Accepts one point or an ``(n, 2)`` batch.
    """
    _check_tau2(tau2)
    pts = np.asarray(p, dtype=float)
    d = distance_to_feature(feature_day, np.atleast_2d(pts))
    w = np.exp(-0.5 * d * d / tau2)
    return float(w[0]) if pts.ndim == 1 else w


def rsf_seasonal(p, feature_day: FeatureDay | None, tau2: float, t: int, season: Season):
    """Seasonal weight: the exact weight inside the season, 1 outside it.

    Outside the season the range parameter is taken as infinite, so the
    weight is identically one and the feature may be absent.
    """
    _check_tau2(tau2)
    if not season.contains(t):
        pts = np.asarray(p, dtype=float)
        return 1.0 if pts.ndim == 1 else np.ones(len(pts))
    return rsf_exact(p, feature_day, tau2)


def linearize(p_prev, feature_day: FeatureDay | None, tau2: float, t: int,
              season: Season) -> GaussianFactor | None:
    """Tangent-line factor at the feature point nearest ``p_prev``; ``None`` off-season."""
    _check_tau2(tau2)
    if not season.contains(t):
        return None
    return line_factor(tangent_at(feature_day, as_point(p_prev)), tau2)
