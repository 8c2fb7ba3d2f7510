"""Synthetic features, parameter sets and populations used by the CLI and the tests."""
from __future__ import annotations

import math
from typing import Iterable

import numpy as np

from .geometry import DynamicFeature, Polyline, rotation
from .movement import CS, SB, ModelParams, Track, simulate_exact, simulate_linearized
from .rsf import DAYS_PER_YEAR, Season
from .seeding import substream

# posterior medians reported for the polar bear application
TABLE1_MEDIANS = {"sigma2": 272.0, "tau2": 8600.0, "a": 69.0, "b": 337.0}


def spectral_cov(log_lam1: float, log_lam2: float, phi: float) -> np.ndarray:
    r = rotation(phi)
    return r @ np.diag([math.exp(log_lam1), math.exp(log_lam2)]) @ r.T


def circle_polyline(radius: float, n_vertices: int = 720, center=(0.0, 0.0)) -> Polyline:
    ang = 2.0 * np.pi * np.arange(n_vertices + 1) / n_vertices
    v = np.column_stack([np.cos(ang), np.sin(ang)]) * radius + np.asarray(center, float)
    v[-1] = v[0]
    return Polyline(v)


def circle_feature(radius: float, n_vertices: int = 720, days: Iterable[int] = (0,),
                   center=(0.0, 0.0)) -> DynamicFeature:
    pl = circle_polyline(radius, n_vertices, center)
    return DynamicFeature({int(d): [pl] for d in days})


def line_polyline(anchor, angle: float, half_length: float = 5000.0) -> Polyline:
    d = np.array([math.cos(angle), math.sin(angle)])
    a = np.asarray(anchor, dtype=float)
    return Polyline([a - half_length * d, a + half_length * d])


def straight_feature(days: Iterable[int], anchor=(0.0, 0.0), angle: float = 0.0,
                     half_length: float = 5000.0) -> DynamicFeature:
    pl = line_polyline(anchor, angle, half_length)
    return DynamicFeature({int(d): [pl] for d in days})


def ice_edge_feature(days: Iterable[int] = range(DAYS_PER_YEAR), offset: float = 260.0,
                     swing: float = 60.0, tilt: float = 0.15) -> DynamicFeature:
    """A straight edge north of both centres that drifts and turns through the year."""
    out = {}
    for t in days:
        phase = 2.0 * math.pi * (int(t) % DAYS_PER_YEAR) / DAYS_PER_YEAR
        y = offset + swing * math.cos(phase - 2.0 * math.pi * 200 / DAYS_PER_YEAR)
        out[int(t)] = [line_polyline((0.0, y), tilt * math.sin(phase), 6000.0)]
    return DynamicFeature(out, "synthetic planar km")


def default_params(sigma2: float = TABLE1_MEDIANS["sigma2"], tau2: float = TABLE1_MEDIANS["tau2"],
                   a: float = TABLE1_MEDIANS["a"], b: float = TABLE1_MEDIANS["b"],
                   separation: float = 1000.0) -> ModelParams:
    half = 0.5 * separation
    return ModelParams(
        sigma2, tau2, Season(a, b),
        center_cs=(-half, 0.0), center_sb=(half, 0.0),
        cov_cs=spectral_cov(math.log(12000.0), math.log(6000.0), 0.4),
        cov_sb=spectral_cov(math.log(10000.0), math.log(5000.0), 1.2),
    )


def population_design(n: int, n_days: int) -> list[tuple[str, int, int]]:
    """``(id, z, t0)`` per individual.

    Labels alternate in pairs; even individuals start early in the year and
    odd ones late, so both ends of the season fall inside some windows.
    """
    late = max(0, DAYS_PER_YEAR - n_days)
    rows = []
    for i in range(n):
        z = CS if (i // 2) % 2 == 0 else SB
        if i % 2 == 0:
            t0 = (7 * (i // 2)) % 45
        else:
            t0 = max(0, late - (5 * (i // 2)) % 30)
        rows.append((f"b{i + 1:03d}", z, t0))
    return rows


def simulate_population(params: ModelParams, feature: DynamicFeature, n: int, n_days: int,
                        seed: int, exact: bool = False) -> tuple[list[Track], dict[str, int]]:
    sim = simulate_exact if exact else simulate_linearized
    tracks, labels = [], {}
    for tid, z, t0 in population_design(n, n_days):
        tracks.append(sim(params, z, feature, t0, n_days, substream(seed, f"simulate/{tid}"), tid))
        labels[tid] = z
    return tracks, labels
