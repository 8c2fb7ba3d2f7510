"""
Bivariate Gaussian factors in precision form.

A factor is ``exp{-1/2 (x - m)' L (x - m)}`` with ``L`` positive
semi-definite, so rank-deficient (improper) terms such as the straight-line
selection weight are first-class. Multiplying factors adds precisions and
precision-weighted anchors; the product is proper once the summed precision
is positive definite.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .errors import ImproperProductError, ParameterError
from .geometry import OrientedLine, as_point, rotation

LOG_2PI = math.log(2.0 * math.pi)
_EIG_TOL = 1e-12


def _eig2(m: np.ndarray) -> tuple[float, float]:
    """Eigenvalues (ascending) of a symmetric 2x2 matrix in closed form."""
    a, b, c = float(m[0, 0]), float(m[0, 1]), float(m[1, 1])
    mid = 0.5 * (a + c)
    rad = math.hypot(0.5 * (a - c), b)
    return mid - rad, mid + rad


def _symmetric_psd(mat) -> np.ndarray:
    """Validated symmetric 2x2 precision.

    Eigenvalues down to ``-1e-12`` times the largest entry are rounding
    noise of a singular matrix and are clamped to zero.
    """
    m = np.array(mat, dtype=float).reshape(2, 2)
    a, b, c, d = float(m[0, 0]), float(m[0, 1]), float(m[1, 0]), float(m[1, 1])
    scale = max(1.0, abs(a), abs(b), abs(c), abs(d))
    if not math.isfinite(a + b + c + d):
        raise ValueError("precision must be finite")
    if abs(b - c) > 1e-12 * scale:
        raise ValueError("precision must be symmetric")
    m[0, 1] = m[1, 0] = 0.5 * (b + c)
    lo, hi = _eig2(m)
    if lo < -_EIG_TOL * scale:
        raise ValueError(f"precision has negative eigenvalue {lo:.3g}")
    if lo < 0.0:
        # drop the negative eigen-component: keep hi u u' with u the leading eigenvector
        a, b, d = m[0, 0], m[0, 1], m[1, 1]
        u = np.array([b, hi - a]) if abs(hi - a) >= abs(hi - d) else np.array([hi - d, b])
        nu = float(u @ u)
        m = hi * np.outer(u, u) / nu if nu > 0.0 else np.diag([max(a, 0.0), max(d, 0.0)])
    return m


@dataclass(frozen=True, eq=False)
class GaussianFactor:
    precision: np.ndarray
    anchor: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "precision", _symmetric_psd(self.precision))
        object.__setattr__(self, "anchor", as_point(self.anchor))

    @property
    def rank(self) -> int:
        lo, hi = _eig2(self.precision)
        if hi <= 0.0:
            return 0
        return 1 + int(lo > _EIG_TOL * hi)

    def log_value(self, points) -> np.ndarray:
        d = np.atleast_2d(np.asarray(points, dtype=float)) - self.anchor
        return -0.5 * np.einsum("ni,ij,nj->n", d, self.precision, d)

    def value(self, points) -> np.ndarray:
        return np.exp(self.log_value(points))

    @classmethod
    def from_gaussian(cls, mean, cov) -> "GaussianFactor":
        return cls(np.linalg.inv(np.asarray(cov, dtype=float)), mean)

    def transformed(self, angle: float, shift=(0.0, 0.0)) -> "GaussianFactor":
        r = rotation(angle)
        return GaussianFactor(r @ self.precision @ r.T, r @ self.anchor + np.asarray(shift, float))


@dataclass(frozen=True, eq=False)
class ProperGaussian:
    mean: np.ndarray
    covariance: np.ndarray

    def __post_init__(self):
        cov = np.asarray(self.covariance, dtype=float).reshape(2, 2)
        cov = 0.5 * (cov + cov.T)
        try:
            chol = np.linalg.cholesky(cov)
        except np.linalg.LinAlgError as exc:
            raise ValueError("covariance is not positive definite") from exc
        object.__setattr__(self, "mean", as_point(self.mean))
        object.__setattr__(self, "covariance", cov)
        object.__setattr__(self, "_chol", chol)

    @property
    def precision(self) -> np.ndarray:
        return np.linalg.inv(self.covariance)

    @property
    def log_det(self) -> float:
        return 2.0 * float(np.sum(np.log(np.diag(self._chol))))

    def log_pdf(self, points) -> np.ndarray:
        d = np.atleast_2d(np.asarray(points, dtype=float)) - self.mean
        sol = np.linalg.solve(self._chol, d.T)
        return -LOG_2PI - 0.5 * self.log_det - 0.5 * np.sum(sol * sol, axis=0)

    def sample(self, rng: np.random.Generator, n: int = 1) -> np.ndarray:
        return self.mean + rng.standard_normal((n, 2)) @ self._chol.T

    def transformed(self, angle: float, shift=(0.0, 0.0)) -> "ProperGaussian":
        r = rotation(angle)
        return ProperGaussian(r @ self.mean + np.asarray(shift, float), r @ self.covariance @ r.T)


def line_factor(line: OrientedLine, tau2: float) -> GaussianFactor:
    """Selection weight ``exp{-d^2 / (2 tau2)}`` of a straight line as a factor.

    Built in the frame where the line is vertical, ``Q = diag(1/tau2, 0)``,
    and rotated back: ``R Q R'`` with ``R`` turning the vertical onto the
    line direction.
    """
    if not tau2 > 0.0:
        raise ParameterError(f"tau2 must be positive, got {tau2!r}")
    r = rotation(line.angle - 0.5 * math.pi)
    q = np.array([[1.0 / tau2, 0.0], [0.0, 0.0]])
    return GaussianFactor(r @ q @ r.T, line.anchor)


def compose(factors: Iterable[GaussianFactor]) -> tuple[ProperGaussian, float]:
    """Normalise a product of factors.

    Returns the product density and ``log Z``, the log integral of the
    unnormalised product ``prod_k exp{-1/2 (x - m_k)' L_k (x - m_k)}``.
    """
    factors = list(factors)
    if not factors:
        raise ImproperProductError("improper product: no factors")
    lam = np.zeros((2, 2))
    eta = np.zeros(2)
    for f in factors:
        lam += f.precision
        eta += f.precision @ f.anchor
    lam = 0.5 * (lam + lam.T)
    lo, hi = _eig2(lam)
    if lo <= _EIG_TOL * max(hi, 1e-300):
        raise ImproperProductError("improper product: summed precision is singular")
    det = lo * hi
    cov = np.array([[lam[1, 1], -lam[0, 1]], [-lam[0, 1], lam[0, 0]]]) / det
    mean = cov @ eta
    # residual form avoids cancellation for anchors far from the origin
    resid = 0.0
    for f in factors:
        d = f.anchor - mean
        resid += float(d @ f.precision @ d)
    log_z = LOG_2PI - 0.5 * math.log(det) - 0.5 * resid
    return ProperGaussian(mean, cov), log_z


def log_density(g: ProperGaussian, p) -> float:
    return float(g.log_pdf(as_point(p)[None])[0])
