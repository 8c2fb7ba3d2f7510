"""
Linearisation-free reference computations.

The exact step integrand (sub-population factor x availability x exact
selection weight) is integrated with the midpoint rule on a uniform grid.
Densities on a shared grid are compared by total variation; samples are
compared with an energy-distance permutation test.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import GridTooSmallError, ParameterError
from .geometry import DynamicFeature, as_point, distance_to_feature
from .movement import ModelParams, step_conditional
from .rsf import Season

BOUNDARY_MASS_TOL = 1e-6


@dataclass(frozen=True)
class GridSpec:
    center: tuple[float, float]
    half_width: float
    n: int = 512

    def __post_init__(self):
        object.__setattr__(self, "center", tuple(float(c) for c in as_point(self.center)))
        if self.n < 32:
            raise ParameterError("grid needs at least 32 cells per axis")
        if not self.half_width > 0.0:
            raise ParameterError("grid half-width must be positive")

    @property
    def spacing(self) -> float:
        return 2.0 * self.half_width / self.n

    @property
    def cell_area(self) -> float:
        return self.spacing ** 2

    def axes(self) -> tuple[np.ndarray, np.ndarray]:
        off = -self.half_width + (np.arange(self.n) + 0.5) * self.spacing
        return self.center[0] + off, self.center[1] + off

    def points(self) -> np.ndarray:
        """Cell centres, row-major with ``y`` varying slowest."""
        xs, ys = self.axes()
        gx, gy = np.meshgrid(xs, ys)
        return np.column_stack([gx.ravel(), gy.ravel()])

    def refined(self) -> "GridSpec":
        return GridSpec(self.center, self.half_width, 2 * self.n)


def default_grid(p_prev, params: ModelParams, n: int = 512) -> GridSpec:
    sigma, tau = math.sqrt(params.sigma2), math.sqrt(params.tau2)
    return GridSpec(tuple(as_point(p_prev)), 6.0 * sigma + 2.0 * tau, n)


def exact_log_integrand(points, p_prev, t: int, params: ModelParams, z: int,
                        feature: DynamicFeature, availability_density: bool = False) -> np.ndarray:
    """Log of the unnormalised exact step integrand at each point.

    Factors enter in their exponential form, matching the normaliser
    reported by :func:`featurestep.gausskit.compose`. With
    ``availability_density`` the availability kernel is the normalised
    bivariate normal density instead.
    """
    pts = np.asarray(points, dtype=float)
    out = params.mixture_factor(z).log_value(pts)
    if p_prev is None:
        return out
    d = pts - as_point(p_prev)
    out = out - 0.5 * np.einsum("ij,ij->i", d, d) / params.sigma2
    if availability_density:
        out = out - math.log(2.0 * math.pi * params.sigma2)
    if params.season.contains(t):
        dist = distance_to_feature(feature.segments(t), pts)
        out = out - 0.5 * dist * dist / params.tau2
    return out


class QuadResult(NamedTuple):
    value: float
    log_value: float
    rel_error: float
    boundary_fraction: float


def _grid_integral(log_f: np.ndarray, grid: GridSpec) -> tuple[float, float]:
    top = float(np.max(log_f))
    w = np.exp(log_f - top).reshape(grid.n, grid.n)
    total = float(w.sum())
    ring = float(w[0].sum() + w[-1].sum() + w[1:-1, 0].sum() + w[1:-1, -1].sum())
    return top + math.log(total * grid.cell_area), ring / total


def quad_normalizer(p_prev, t: int, params: ModelParams, z: int, feature: DynamicFeature,
                    grid: GridSpec | None = None, *, estimate_error: bool = True,
                    availability_density: bool = False) -> QuadResult:
    """Midpoint-rule normaliser of the exact step integrand.

    The relative discretisation error is estimated by repeating the
    integral on a grid with twice the resolution.
    """
    if grid is None:
        grid = default_grid(p_prev if p_prev is not None else params.center(z), params)
    if p_prev is not None:
        reach = 6.0 * math.sqrt(params.sigma2)
        offset = np.max(np.abs(as_point(p_prev) - np.asarray(grid.center)))
        if offset + reach > grid.half_width:
            raise GridTooSmallError(
                f"grid too small: it must extend {reach:.1f} km beyond the previous position")
    log_f = exact_log_integrand(grid.points(), p_prev, t, params, z, feature, availability_density)
    log_z, ring = _grid_integral(log_f, grid)
    if ring > BOUNDARY_MASS_TOL:
        raise GridTooSmallError(f"grid too small: boundary cells hold {ring:.2e} of the mass")
    rel = float("nan")
    if estimate_error:
        fine = grid.refined()
        log_f2 = exact_log_integrand(fine.points(), p_prev, t, params, z, feature,
                                     availability_density)
        log_z2, _ = _grid_integral(log_f2, fine)
        rel = abs(math.expm1(log_z - log_z2))
    return QuadResult(math.exp(log_z), log_z, rel, ring)


def _normalize(f: np.ndarray, cell_area: float) -> np.ndarray:
    f = np.asarray(f, dtype=float)
    return f / (f.sum() * cell_area)


def tv_distance(f, g, cell_area: float = 1.0) -> float:
    """Total variation between two gridded densities, each renormalised on the grid."""
    f = _normalize(f, cell_area)
    g = _normalize(g, cell_area)
    return float(0.5 * np.abs(f - g).sum() * cell_area)


def conditional_grids(p_prev, t: int, params: ModelParams, z: int, feature: DynamicFeature,
                      grid: GridSpec | None = None):
    """Exact and linearised step densities on one grid, both normalised."""
    if grid is None:
        grid = default_grid(p_prev if p_prev is not None else params.center(z), params)
    pts = grid.points()
    log_exact = exact_log_integrand(pts, p_prev, t, params, z, feature)
    exact = np.exp(log_exact - log_exact.max())
    g, _ = step_conditional(p_prev, t, params, z, feature)
    log_lin = g.log_pdf(pts)
    lin = np.exp(log_lin - log_lin.max())
    shape = (grid.n, grid.n)
    return (_normalize(exact, grid.cell_area).reshape(shape),
            _normalize(lin, grid.cell_area).reshape(shape), grid)


def linearization_tv(p_prev, t: int, params: ModelParams, z: int, feature: DynamicFeature,
                     grid: GridSpec | None = None) -> float:
    exact, lin, grid = conditional_grids(p_prev, t, params, z, feature, grid)
    return tv_distance(exact, lin, grid.cell_area)


# ---------------------------------------------------------------------------
# two-sample energy distance

class EnergyTest(NamedTuple):
    statistic: float
    p_value: float
    null: np.ndarray

    def null_quantile(self, q: float) -> float:
        return float(np.quantile(self.null, q))


def energy_test(x, y, n_perm: int = 199, seed=0, block: int = 1024) -> EnergyTest:
    """Energy-distance permutation test.

    With pooled distance matrix ``D`` and label vector ``u``, every
    statistic needs only ``u'Du`` and ``u'D1``; all permutations are
    handled together as one matrix product per row block, so ``D`` is
    never stored.
    """
    from scipy.spatial.distance import cdist

    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    pool = np.vstack([x, y])
    n, m = len(x), len(y)
    rng = np.random.default_rng(seed)
    labels = np.zeros((n + m, n_perm + 1), dtype=np.float32)
    labels[:n, 0] = 1.0
    base = labels[:, 0].copy()
    for k in range(1, n_perm + 1):
        labels[:, k] = rng.permutation(base)
    du = np.zeros((n + m, n_perm + 1))
    row_sum = np.zeros(n + m)
    for i in range(0, n + m, block):
        d = cdist(pool[i:i + block], pool).astype(np.float32)
        row_sum[i:i + block] = d.sum(axis=1, dtype=np.float64)
        du[i:i + block] = d @ labels
    lab = labels.astype(float)
    s_xx = np.einsum("ik,ik->k", lab, du)
    s_x1 = lab.T @ row_sum
    total = row_sum.sum()
    s_xy = s_x1 - s_xx
    s_yy = total - 2.0 * s_x1 + s_xx
    stats = 2.0 * s_xy / (n * m) - s_xx / n ** 2 - s_yy / m ** 2
    obs, null = float(stats[0]), stats[1:]
    p = (1.0 + np.sum(null >= obs)) / (n_perm + 1.0)
    return EnergyTest(obs, float(p), null)


def energy_distance(x, y) -> float:
    return energy_test(x, y, n_perm=0).statistic


# ---------------------------------------------------------------------------
# linearisation validation report

VALIDATION_HEADER = ["scenario", "curvature", "sigma_mu", "tau", "tv",
                     "runtime_exact", "runtime_linearized"]


def circle_scenario(radius: float, sigma: float, tau: float, offset: float = 50.0,
                    n_vertices: int = 720, day: int = 180):
    """A circular feature with the previous position ``offset`` km outside it.

    The sub-population factor is centred on the previous position and made
    very weak so the comparison isolates the selection weight.
    """
    from .scenarios import circle_feature

    feature = circle_feature(radius, n_vertices, days=[day])
    p_prev = np.array([radius + offset, 0.0])
    params = ModelParams(sigma ** 2, tau ** 2, Season(0.0, 364.0), p_prev, p_prev,
                         1e8 * np.eye(2), 1e8 * np.eye(2))
    return p_prev, day, params, feature


def validate_linearization(radii=(100.0, 300.0, 1000.0), sigma: float = 16.5, tau: float = 93.0,
                           offset: float = 50.0, n: int = 512) -> list[dict]:
    rows = []
    for radius in radii:
        p_prev, day, params, feature = circle_scenario(radius, sigma, tau, offset)
        grid = default_grid(p_prev, params, n)
        t0 = time.perf_counter()
        quad_normalizer(p_prev, day, params, 1, feature, grid, estimate_error=False)
        t1 = time.perf_counter()
        step_conditional(p_prev, day, params, 1, feature)
        t2 = time.perf_counter()
        tv = linearization_tv(p_prev, day, params, 1, feature, grid)
        rows.append({"scenario": f"circle_r{radius:g}", "curvature": 1.0 / radius,
                     "sigma_mu": sigma, "tau": tau, "tv": tv,
                     "runtime_exact": t1 - t0, "runtime_linearized": t2 - t1})
    return rows


# ---------------------------------------------------------------------------
# timing: closed-form step density against the quadrature normaliser

BENCH_HEADER = ["method", "seconds_per_eval", "repeats"]


def standard_scenario(day: int = 180, distance: float = 100.0):
    """The ice-edge feature at median parameters, previous position ``distance`` km south of it."""
    from .scenarios import default_params, ice_edge_feature

    feature = ice_edge_feature(days=[day])
    params = default_params()
    segs = feature.segments(day)
    mid = 0.5 * (segs.start[0] + segs.end[0])
    p_prev = mid - np.array([0.0, distance])
    return p_prev, day, params, feature


def _best_time(fn, repeats: int, inner: int = 1) -> float:
    best = math.inf
    for _ in range(max(1, repeats)):
        t0 = time.perf_counter()
        for _ in range(inner):
            fn()
        best = min(best, (time.perf_counter() - t0) / inner)
    return best


def benchmark(repeats: int = 5, n: int = 512) -> dict:
    """Best-of-``repeats`` seconds per evaluation for each method, and their ratio."""
    from .gausskit import log_density

    p_prev, day, params, feature = standard_scenario()
    z = 1
    grid = default_grid(p_prev, params, n)
    x = p_prev + np.array([5.0, 10.0])

    def linearized():
        g, _ = step_conditional(p_prev, day, params, z, feature)
        return log_density(g, x)

    def quadrature():
        return quad_normalizer(p_prev, day, params, z, feature, grid, estimate_error=False)

    linearized()
    quadrature()
    t_lin = _best_time(linearized, repeats, inner=50)
    t_quad = _best_time(quadrature, repeats)
    return {"quadrature_normalizer": t_quad, "linearized_step_density": t_lin,
            "speedup": t_quad / t_lin, "repeats": repeats, "grid_n": n}
