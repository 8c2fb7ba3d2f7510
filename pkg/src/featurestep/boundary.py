"""
Equal-density boundary between the two sub-population Gaussians.

``log N_CS(p) - log N_SB(p)`` is a quadratic polynomial in ``p``; its zero
set is a conic. The conic is traced by marching squares with Newton
refinement, and a posterior over the Gaussians is summarised by offsets of
each draw's conic along rays orthogonal to a central boundary.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import NumericalError, ParameterError
from .inference import PosteriorSamples, spectral_to_cov
from .movement import CS, SB


class DegenerateConicError(NumericalError):
    pass


@dataclass(frozen=True)
class Conic:
    """``A x^2 + B xy + C y^2 + D x + E y + F``; positive where CS is denser."""

    A: float
    B: float
    C: float
    D: float
    E: float
    F: float

    @property
    def coeffs(self) -> np.ndarray:
        return np.array([self.A, self.B, self.C, self.D, self.E, self.F])

    def __call__(self, points) -> np.ndarray:
        p = np.asarray(points, dtype=float)
        x, y = p[..., 0], p[..., 1]
        return self.A * x * x + self.B * x * y + self.C * y * y + self.D * x + self.E * y + self.F

    def gradient(self, points) -> np.ndarray:
        p = np.asarray(points, dtype=float)
        x, y = p[..., 0], p[..., 1]
        return np.stack([2 * self.A * x + self.B * y + self.D,
                         self.B * x + 2 * self.C * y + self.E], axis=-1)

    def term_scale(self, points) -> np.ndarray:
        """Sum of absolute monomial terms, the natural size of round-off."""
        p = np.asarray(points, dtype=float)
        x, y = np.abs(p[..., 0]), np.abs(p[..., 1])
        return (abs(self.A) * x * x + abs(self.B) * x * y + abs(self.C) * y * y
                + abs(self.D) * x + abs(self.E) * y + abs(self.F))

    def negated(self) -> "Conic":
        return Conic(*(-self.coeffs))


def _log_gauss(points, mean, cov) -> np.ndarray:
    d = np.asarray(points, dtype=float) - mean
    prec = np.linalg.inv(cov)
    return (-math.log(2 * math.pi) - 0.5 * math.log(np.linalg.det(cov))
            - 0.5 * np.einsum("...i,ij,...j->...", d, prec, d))


def log_density_gap(points, center_cs, cov_cs, center_sb, cov_sb) -> np.ndarray:
    """``log N_CS - log N_SB`` evaluated directly, for checking traced points."""
    return (_log_gauss(points, np.asarray(center_cs, float), np.asarray(cov_cs, float))
            - _log_gauss(points, np.asarray(center_sb, float), np.asarray(cov_sb, float)))


def equal_density_conic(center_cs, cov_cs, center_sb, cov_sb) -> Conic:
    c1, c2 = np.asarray(center_cs, float), np.asarray(center_sb, float)
    s1, s2 = np.asarray(cov_cs, float), np.asarray(cov_sb, float)
    for name, s in (("cov_cs", s1), ("cov_sb", s2)):
        if not (np.allclose(s, s.T) and np.all(np.linalg.eigvalsh(s) > 0.0)):
            raise ParameterError(f"{name} must be positive definite")
    p1, p2 = np.linalg.inv(s1), np.linalg.inv(s2)
    dq = p2 - p1
    lin = p1 @ c1 - p2 @ c2
    const = (-0.5 * c1 @ p1 @ c1 + 0.5 * c2 @ p2 @ c2
             - 0.5 * math.log(np.linalg.det(s1)) + 0.5 * math.log(np.linalg.det(s2)))
    conic = Conic(0.5 * dq[0, 0], dq[0, 1], 0.5 * dq[1, 1], lin[0], lin[1], float(const))
    size = max(np.max(np.abs(p1)), np.max(np.abs(p2))) * max(1.0, np.max(np.abs(c1)),
                                                              np.max(np.abs(c2)))
    if np.all(np.abs(conic.coeffs[:5]) <= 1e-14 * size):
        raise DegenerateConicError("degenerate: boundary undefined (identical Gaussians)")
    return conic


def newton_refine(conic: Conic, points, tol: float = 1e-13, max_iter: int = 8) -> np.ndarray:
    """Move points along the gradient onto the zero set."""
    p = np.array(points, dtype=float)
    for _ in range(max_iter):
        f = conic(p)
        if np.all(np.abs(f) <= tol * np.maximum(conic.term_scale(p), 1.0)):
            break
        g = conic.gradient(p)
        g2 = np.einsum("ij,ij->i", g, g)
        ok = g2 > 0.0
        p[ok] -= (f[ok] / g2[ok])[:, None] * g[ok]
    return p


# ---------------------------------------------------------------------------
# marching squares

def _edge_point(conic, xs, ys, vals, key):
    kind, i, j = key
    if kind == "h":
        f0, f1 = vals[j, i], vals[j, i + 1]
        t = f0 / (f0 - f1) if f0 != f1 else 0.5
        return xs[i] + t * (xs[i + 1] - xs[i]), ys[j]
    f0, f1 = vals[j, i], vals[j + 1, i]
    t = f0 / (f0 - f1) if f0 != f1 else 0.5
    return xs[i], ys[j] + t * (ys[j + 1] - ys[j])


def trace_conic(conic: Conic, window, step: float) -> list[np.ndarray]:
    """Zero set of ``conic`` inside ``window = (xmin, ymin, xmax, ymax)``.

    Returns one vertex array per connected branch; closed branches repeat
    their first vertex at the end. An empty list means no zero crossing.
    """
    xmin, ymin, xmax, ymax = map(float, window)
    if not (xmax > xmin and ymax > ymin and step > 0.0):
        raise ParameterError("window must have positive extent and step must be positive")
    nx = max(2, int(math.ceil((xmax - xmin) / step)) + 1)
    ny = max(2, int(math.ceil((ymax - ymin) / step)) + 1)
    xs = np.linspace(xmin, xmax, nx)
    ys = np.linspace(ymin, ymax, ny)
    gx, gy = np.meshgrid(xs, ys)
    vals = conic(np.stack([gx, gy], axis=-1))
    pos = vals >= 0.0
    corners = (pos[:-1, :-1].astype(np.int8) + pos[:-1, 1:] + pos[1:, 1:] + pos[1:, :-1])
    cells = np.argwhere((corners > 0) & (corners < 4))

    links: dict = {}

    def link(e1, e2):
        links.setdefault(e1, []).append(e2)
        links.setdefault(e2, []).append(e1)

    for j, i in cells:
        s = (pos[j, i], pos[j, i + 1], pos[j + 1, i + 1], pos[j + 1, i])
        edges = [("h", i, j), ("v", i + 1, j), ("h", i, j + 1), ("v", i, j)]
        cut = [k for k in range(4) if s[k] != s[(k + 1) % 4]]
        if len(cut) == 2:
            link(edges[cut[0]], edges[cut[1]])
            continue
        # saddle: the centre's sign decides which diagonal pair stays joined
        centre = conic(np.array([0.5 * (xs[i] + xs[i + 1]), 0.5 * (ys[j] + ys[j + 1])])) >= 0.0
        if centre == s[0]:
            link(edges[0], edges[1])
            link(edges[2], edges[3])
        else:
            link(edges[3], edges[0])
            link(edges[1], edges[2])

    branches = []
    seen = set()
    starts = [e for e, nb in links.items() if len(nb) == 1] + list(links)
    for e0 in starts:
        if e0 in seen:
            continue
        chain = [e0]
        seen.add(e0)
        prev, cur = None, e0
        while True:
            nxt = [e for e in links[cur] if e != prev and e not in seen]
            if not nxt:
                break
            prev, cur = cur, nxt[0]
            chain.append(cur)
            seen.add(cur)
        closed = len(chain) > 2 and e0 in links[cur] and len(links[e0]) == 2
        pts = np.array([_edge_point(conic, xs, ys, vals, e) for e in chain])
        if closed:
            pts = np.vstack([pts, pts[:1]])
        pts = newton_refine(conic, pts)
        if closed:
            pts[-1] = pts[0]
        keep = np.ones(len(pts), dtype=bool)
        keep[1:] = np.any(np.abs(np.diff(pts, axis=0)) > 1e-9 * step, axis=1)
        if closed:
            keep[-1] = True
        pts = pts[keep]
        if len(pts) >= 2:
            branches.append(pts)
    branches.sort(key=lambda b: (-len(b), b[0, 0], b[0, 1]))
    return branches


# ---------------------------------------------------------------------------
# posterior summary

def _axial_median(phi: np.ndarray) -> float:
    """Median of angles modulo pi, unwrapped opposite the mean axis."""
    mean = 0.5 * math.atan2(np.mean(np.sin(2 * phi)), np.mean(np.cos(2 * phi)))
    unwrapped = (phi - mean + 0.5 * math.pi) % math.pi + mean - 0.5 * math.pi
    return float(np.median(unwrapped) % math.pi)


def median_gaussians(post: PosteriorSamples):
    """Coordinate-wise posterior medians of centres and covariance spectra."""
    out = {}
    for lab, name in ((CS, "cs"), (SB, "sb")):
        c = np.median(post.cen[:, lab], axis=0)
        l1 = float(np.median(post.spec[:, lab, 0]))
        l2 = float(np.median(post.spec[:, lab, 1]))
        phi = _axial_median(post.spec[:, lab, 2])
        out[name] = (c, spectral_to_cov((max(l1, l2), min(l1, l2), phi)))
    return out["cs"][0], out["cs"][1], out["sb"][0], out["sb"][1]


def draw_conics(post: PosteriorSamples) -> list[Conic | None]:
    out = []
    for j in range(len(post)):
        try:
            out.append(equal_density_conic(post.cen[j, CS], spectral_to_cov(post.spec[j, CS]),
                                           post.cen[j, SB], spectral_to_cov(post.spec[j, SB])))
        except DegenerateConicError:
            out.append(None)
    return out


def ray_offsets(conic: Conic, origins, normals) -> np.ndarray:
    """Signed distance along each unit normal to the nearest zero of ``conic``; NaN if none."""
    o = np.asarray(origins, float)
    n = np.asarray(normals, float)
    alpha = conic.A * n[:, 0] ** 2 + conic.B * n[:, 0] * n[:, 1] + conic.C * n[:, 1] ** 2
    beta = np.einsum("ij,ij->i", conic.gradient(o), n)
    gamma = conic(o)
    out = np.full(len(o), np.nan)
    scale = np.maximum(np.abs(beta), 1e-300)
    lin = np.abs(alpha) * np.maximum(1.0, np.abs(gamma / scale)) <= 1e-14 * scale
    with np.errstate(divide="ignore", invalid="ignore"):
        out[lin] = np.where(beta[lin] != 0.0, -gamma[lin] / beta[lin], np.nan)
        q = ~lin
        disc = beta[q] ** 2 - 4.0 * alpha[q] * gamma[q]
        root = np.sqrt(np.where(disc >= 0.0, disc, np.nan))
        # stable pair of roots
        t = -0.5 * (beta[q] + np.copysign(root, beta[q]))
        r1 = t / alpha[q]
        r2 = np.where(t != 0.0, gamma[q] / t, r1)
        out[q] = np.where(np.abs(r1) <= np.abs(r2), r1, r2)
    return out


@dataclass(frozen=True, eq=False)
class BoundarySummary:
    vertices: np.ndarray
    normals: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    excluded: np.ndarray
    n_draws: int
    conic: Conic

    @property
    def half_width(self) -> np.ndarray:
        return 0.5 * (self.upper - self.lower)

    def band(self) -> tuple[np.ndarray, np.ndarray]:
        return (self.vertices + self.lower[:, None] * self.normals,
                self.vertices + self.upper[:, None] * self.normals)


def default_window(post: PosteriorSamples, pad_sd: float = 4.0):
    c_cs, s_cs, c_sb, s_sb = median_gaussians(post)
    r = pad_sd * math.sqrt(max(np.linalg.eigvalsh(s_cs)[-1], np.linalg.eigvalsh(s_sb)[-1]))
    lo = np.minimum(c_cs, c_sb) - r
    hi = np.maximum(c_cs, c_sb) + r
    return (lo[0], lo[1], hi[0], hi[1])


def summarize_boundary(post: PosteriorSamples, window=None, step: float = 5.0) -> BoundarySummary:
    """Central boundary from median parameters, with pointwise 95% orthogonal intervals.

    The central line is the longest traced branch. At each vertex every
    draw contributes the signed offset of its own conic along the normal;
    draws with no crossing are excluded there and counted. Percentiles use
    the nearest-rank convention (lower at 2.5, higher at 97.5).
    """
    if len(post) == 0:
        raise ParameterError("posterior has no draws")
    if window is None:
        window = default_window(post)
    c_cs, s_cs, c_sb, s_sb = median_gaussians(post)
    central = equal_density_conic(c_cs, s_cs, c_sb, s_sb)
    branches = trace_conic(central, window, step)
    if not branches:
        raise NumericalError("central boundary does not cross the window")
    verts = branches[0]
    g = central.gradient(verts)
    normals = g / np.linalg.norm(g, axis=1, keepdims=True)
    offsets = np.full((len(post), len(verts)), np.nan)
    for j, conic in enumerate(draw_conics(post)):
        if conic is not None:
            offsets[j] = ray_offsets(conic, verts, normals)
    excluded = np.sum(np.isnan(offsets), axis=0)
    lower = np.full(len(verts), np.nan)
    upper = np.full(len(verts), np.nan)
    for v in range(len(verts)):
        col = offsets[:, v][~np.isnan(offsets[:, v])]
        if len(col):
            lower[v] = np.percentile(col, 2.5, method="lower")
            upper[v] = np.percentile(col, 97.5, method="higher")
    return BoundarySummary(verts, normals, lower, upper, excluded, len(post), central)


BOUNDARY_CSV_HEADER = ["vertex", "x_km", "y_km", "nx", "ny", "lower_km", "upper_km",
                       "half_width_km", "excluded"]


def write_boundary_csv(summary: BoundarySummary, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(BOUNDARY_CSV_HEADER)
        for v, (p, n, lo, hi, hw, ex) in enumerate(zip(
                summary.vertices, summary.normals, summary.lower, summary.upper,
                summary.half_width, summary.excluded)):
            w.writerow([v] + [f"{x:.6f}" for x in (p[0], p[1], n[0], n[1], lo, hi, hw)] + [int(ex)])


def _linestring(pts, role: str) -> dict:
    coords = [[round(float(x), 6), round(float(y), 6)] for x, y in pts if np.isfinite([x, y]).all()]
    return {"type": "Feature", "properties": {"role": role},
            "geometry": {"type": "LineString", "coordinates": coords}}


def write_boundary_geojson(summary: BoundarySummary, path) -> None:
    lo, hi = summary.band()
    doc = {"type": "FeatureCollection", "features": [
        _linestring(summary.vertices, "central"),
        _linestring(lo, "lower_95"),
        _linestring(hi, "upper_95"),
    ]}
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")


def separates(summary: BoundarySummary, center_cs, center_sb) -> bool:
    """Both centres lie on their own side of the central boundary."""
    f = summary.conic(np.array([center_cs, center_sb], dtype=float))
    return bool(f[0] > 0.0 > f[1])


def conics_of(draws: Sequence[tuple]) -> list[Conic]:
    return [equal_density_conic(*d) for d in draws]
