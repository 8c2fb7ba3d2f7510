"""
Step model: each daily position is drawn from the normalised product of a
sub-population factor, an availability kernel around the previous position
and the seasonal selection weight of the dynamic feature.

The linearised conditional replaces the feature by its tangent at the point
nearest the previous position, which makes every step a closed-form
bivariate Gaussian. ``simulate_exact`` keeps the exact weight and samples by
rejection, using the weight's bound of one.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from ._kernels import individual_loglik
from .errors import DataError, FeatureAbsentError, NumericalError, ParameterError
from .gausskit import GaussianFactor, ProperGaussian, compose, log_density
from .geometry import DynamicFeature, as_point, tangent_directions
from .rsf import Season, day_of_year, linearize, rsf_seasonal

CS, SB = 1, 0


def _pd(cov, name) -> np.ndarray:
    c = np.asarray(cov, dtype=float).reshape(2, 2)
    if not np.allclose(c, c.T, rtol=0, atol=1e-9 * max(1.0, np.abs(c).max())):
        raise ParameterError(f"{name} must be symmetric")
    c = 0.5 * (c + c.T)
    if np.linalg.eigvalsh(c)[0] <= 0.0:
        raise ParameterError(f"{name} must be positive definite")
    return c


@dataclass(frozen=True, eq=False)
class ModelParams:
    sigma2: float
    tau2: float
    season: Season
    center_cs: np.ndarray
    center_sb: np.ndarray
    cov_cs: np.ndarray
    cov_sb: np.ndarray

    def __post_init__(self):
        if not self.sigma2 > 0.0:
            raise ParameterError(f"sigma2 must be positive, got {self.sigma2!r}")
        if not self.tau2 > 0.0:
            raise ParameterError(f"tau2 must be positive, got {self.tau2!r}")
        object.__setattr__(self, "sigma2", float(self.sigma2))
        object.__setattr__(self, "tau2", float(self.tau2))
        object.__setattr__(self, "center_cs", as_point(self.center_cs))
        object.__setattr__(self, "center_sb", as_point(self.center_sb))
        object.__setattr__(self, "cov_cs", _pd(self.cov_cs, "cov_cs"))
        object.__setattr__(self, "cov_sb", _pd(self.cov_sb, "cov_sb"))

    def center(self, z: int) -> np.ndarray:
        return self.center_cs if z == CS else self.center_sb

    def cov(self, z: int) -> np.ndarray:
        return self.cov_cs if z == CS else self.cov_sb

    def mixture_factor(self, z: int) -> GaussianFactor:
        return GaussianFactor.from_gaussian(self.center(z), self.cov(z))

    def availability_factor(self, p_prev) -> GaussianFactor:
        return GaussianFactor(np.eye(2) / self.sigma2, p_prev)

    def replace(self, **changes) -> "ModelParams":
        return replace(self, **changes)


@dataclass(eq=False)
class Track:
    id: str
    t0: int
    positions: np.ndarray

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=float).reshape(-1, 2)
        if len(pos) == 0:
            raise DataError(f"track {self.id!r} has no positions")
        self.positions = pos
        self.t0 = int(self.t0)
        self.id = str(self.id)

    @property
    def days(self) -> np.ndarray:
        return np.arange(self.t0, self.t0 + len(self.positions))

    def __len__(self):
        return len(self.positions)


def _in_season(t, season: Season) -> bool:
    return bool(season.contains(t))


def step_factors(p_prev, t: int, params: ModelParams, z: int,
                 feature: DynamicFeature) -> list[GaussianFactor]:
    factors = [params.mixture_factor(z)]
    if p_prev is not None:
        factors.append(params.availability_factor(p_prev))
        if _in_season(t, params.season):
            factors.append(linearize(p_prev, feature.segments(t), params.tau2, t, params.season))
    return factors


def step_conditional(p_prev, t: int, params: ModelParams, z: int,
                     feature: DynamicFeature) -> tuple[ProperGaussian, float]:
    """Linearised conditional of the position on day ``t``.

    ``p_prev is None`` marks the first day of a track, where only the
    sub-population factor applies. Returns the normalised Gaussian and the
    log integral of the unnormalised factor product.
    """
    return compose(step_factors(p_prev, t, params, z, feature))


def log_path_likelihood(track: Track, params: ModelParams, z: int,
                        feature: DynamicFeature) -> float:
    total = 0.0
    prev = None
    for t, x in zip(track.days, track.positions):
        g, _ = step_conditional(prev, int(t), params, z, feature)
        total += log_density(g, x)
        prev = x
    return total


# ---------------------------------------------------------------------------
# batched evaluation over many individuals

@dataclass(eq=False)
class PathTable:
    """Flattened steps of many individuals with precomputed tangent lines.

    Tangents depend only on the previous realised position, so they are
    fixed once the paths are data. ``starts[i]:starts[i+1]`` indexes the
    steps of individual ``i``; a segment break restarts the process.
    """

    x: np.ndarray
    prev: np.ndarray
    nrm: np.ndarray
    off: np.ndarray
    doy: np.ndarray
    first: np.ndarray
    has_feat: np.ndarray
    starts: np.ndarray
    ids: list = field(default_factory=list)

    @property
    def n_individuals(self) -> int:
        return len(self.starts) - 1

    @classmethod
    def build(cls, individuals: Sequence[Sequence[tuple[int, np.ndarray]]],
              feature: DynamicFeature, ids: Sequence[str] | None = None) -> "PathTable":
        """``individuals[i]`` is a list of ``(t0, positions)`` segments."""
        xs, prevs, days, firsts, counts = [], [], [], [], []
        for segments in individuals:
            count = 0
            for t0, pos in segments:
                pos = np.asarray(pos, dtype=float).reshape(-1, 2)
                n = len(pos)
                xs.append(pos)
                prevs.append(np.vstack([pos[:1], pos[:-1]]))
                days.append(np.arange(t0, t0 + n))
                f = np.zeros(n, dtype=np.bool_)
                f[0] = True
                firsts.append(f)
                count += n
            counts.append(count)
        if xs:
            x = np.ascontiguousarray(np.concatenate(xs))
            prev = np.ascontiguousarray(np.concatenate(prevs))
            day = np.concatenate(days)
            first = np.concatenate(firsts)
        else:
            x = prev = np.zeros((0, 2))
            day = np.zeros(0, dtype=np.int64)
            first = np.zeros(0, dtype=np.bool_)
        nrm, off, has_feat = tangent_table(prev, day, first, feature)
        starts = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
        return cls(x, prev, nrm, off, day_of_year(day).astype(float), first, has_feat,
                   starts, list(ids) if ids is not None else [])

    @classmethod
    def from_tracks(cls, tracks: Sequence[Track], feature: DynamicFeature) -> "PathTable":
        return cls.build([[(tr.t0, tr.positions)] for tr in tracks], feature,
                         [tr.id for tr in tracks])


def tangent_table(prev: np.ndarray, day: np.ndarray, first: np.ndarray,
                  feature: DynamicFeature):
    """Unit normals and offsets ``n . m`` of the tangent line for each step."""
    n = len(prev)
    nrm = np.zeros((n, 2))
    nrm[:, 1] = 1.0
    off = np.zeros(n)
    has_feat = np.zeros(n, dtype=np.bool_)
    need = ~first
    for t in np.unique(day[need]):
        if t not in feature:
            continue
        idx = np.flatnonzero(need & (day == t))
        anchor, d = tangent_directions(feature.segments(t), prev[idx])
        nn = np.column_stack([-d[:, 1], d[:, 0]])
        nrm[idx] = nn
        off[idx] = np.einsum("ij,ij->i", nn, anchor)
        has_feat[idx] = True
    return nrm, off, has_feat


def mixture_arrays(center_cs, cov_cs, center_sb, cov_sb):
    """Precisions and centres stacked by label (index 0 = SB, 1 = CS)."""
    prec = np.empty((2, 2, 2))
    prec[SB] = np.linalg.inv(cov_sb)
    prec[CS] = np.linalg.inv(cov_cs)
    cen = np.empty((2, 2))
    cen[SB] = center_sb
    cen[CS] = center_cs
    return prec, cen


def batch_loglik(table: PathTable, sigma2: float, tau2: float, a: float, b: float,
                 prec: np.ndarray, cen: np.ndarray, labels, active=None,
                 out: np.ndarray | None = None, spans=None) -> np.ndarray:
    """Per-individual log-likelihoods from raw parameter values.

    ``spans`` = ``(begin, end)`` step ranges overrides ``table.starts``.
    """
    if spans is None:
        spans = (table.starts[:-1], table.starts[1:])
    begin, end = spans
    n_ind = len(begin)
    labels = np.broadcast_to(np.asarray(labels, dtype=np.int64), (n_ind,))
    if active is None:
        active = np.ones(n_ind, dtype=np.bool_)
    if out is None:
        out = np.zeros(n_ind)
    individual_loglik(table.x, table.prev, table.nrm, table.off, table.doy, table.first,
                      table.has_feat, begin, end, np.ascontiguousarray(labels), active,
                      float(sigma2), float(tau2), float(a), float(b), prec, cen, out)
    return out


def path_logliks(table: PathTable, params: ModelParams, labels) -> np.ndarray:
    """Per-individual log-likelihoods; a missing in-season feature is an error."""
    prec, cen = mixture_arrays(params.center_cs, params.cov_cs, params.center_sb, params.cov_sb)
    out = batch_loglik(table, params.sigma2, params.tau2, params.season.a, params.season.b,
                       prec, cen, labels)
    if np.any(np.isneginf(out)):
        bad = np.flatnonzero(np.isneginf(out))
        raise FeatureAbsentError(f"feature absent for an in-season day (individuals {bad.tolist()})")
    return out


# ---------------------------------------------------------------------------
# simulation

MAX_PROPOSALS = 10_000_000
MIN_ACCEPT_RATE = 1e-6


def sample_step_linearized(p_prev, t: int, params: ModelParams, z: int,
                           feature: DynamicFeature, rng: np.random.Generator,
                           n: int = 1) -> np.ndarray:
    g, _ = step_conditional(p_prev, t, params, z, feature)
    return g.sample(rng, n)


def sample_step_exact(p_prev, t: int, params: ModelParams, z: int, feature: DynamicFeature,
                      rng: np.random.Generator, n: int = 1,
                      max_proposals: int = MAX_PROPOSALS) -> tuple[np.ndarray, int]:
    """Draw ``n`` positions from the exact conditional by rejection.

    Proposals come from the sub-population x availability product and are
    accepted with the seasonal weight, which never exceeds one. Returns the
    draws and the number of proposals made.
    """
    factors = [params.mixture_factor(z)]
    if p_prev is not None:
        factors.append(params.availability_factor(p_prev))
    proposal, _ = compose(factors)
    if p_prev is None or not _in_season(t, params.season):
        return proposal.sample(rng, n), n
    segs = feature.segments(t)
    out = np.empty((n, 2))
    filled = 0
    proposed = 0
    rate = 0.5
    while filled < n:
        batch = int(min(2_000_000, max(64, 1.25 * (n - filled) / max(rate, 1e-7))))
        cand = proposal.sample(rng, batch)
        w = rsf_seasonal(cand, segs, params.tau2, t, params.season)
        keep = cand[rng.random(batch) < w]
        proposed += batch
        take = min(len(keep), n - filled)
        out[filled:filled + take] = keep[:take]
        filled += take
        rate = max(filled, 1) / proposed
        if proposed >= max_proposals and filled / proposed < MIN_ACCEPT_RATE:
            d = float(np.sqrt(-2.0 * params.tau2 * np.log(max(
                rsf_seasonal(as_point(p_prev), segs, params.tau2, t, params.season), 1e-300))))
            raise NumericalError(
                f"rejection sampler stalled on day {t}: {filled} accepted of {proposed} "
                f"proposals; previous position is {d:.1f} km from the feature "
                f"(tau = {math.sqrt(params.tau2):.1f} km)")
    return out, proposed


def _simulate(step, params, z, feature, t0, T, seed, track_id):
    if T < 1:
        raise ParameterError("a track needs at least one day")
    rng = np.random.default_rng(seed)
    pos = np.empty((T, 2))
    prev = None
    for j in range(T):
        pos[j] = step(prev, t0 + j, params, z, feature, rng)
        prev = pos[j]
    return Track(track_id, t0, pos)


def simulate_exact(params: ModelParams, z: int, feature: DynamicFeature, t0: int, T: int,
                   seed, track_id: str = "0") -> Track:
    return _simulate(lambda p, t, pa, zz, f, r: sample_step_exact(p, t, pa, zz, f, r)[0][0],
                     params, z, feature, t0, T, seed, track_id)


def simulate_linearized(params: ModelParams, z: int, feature: DynamicFeature, t0: int, T: int,
                        seed, track_id: str = "0") -> Track:
    return _simulate(lambda p, t, pa, zz, f, r: sample_step_linearized(p, t, pa, zz, f, r)[0],
                     params, z, feature, t0, T, seed, track_id)


# ---------------------------------------------------------------------------
# CSV interface: id,day,x_km,y_km

TRACK_HEADER = ["id", "day", "x_km", "y_km"]


def write_tracks(tracks: Iterable[Track], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRACK_HEADER)
        for tr in tracks:
            for day, (x, y) in zip(tr.days, tr.positions):
                w.writerow([tr.id, int(day), f"{x:.6f}", f"{y:.6f}"])


def read_csv_rows(path, header: Sequence[str]):
    """Yield ``(line_number, row)`` pairs, validating the header and width."""
    path = Path(path)
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise DataError(f"cannot open {path}: {exc}") from exc
    with fh:
        reader = csv.reader(fh)
        got = next(reader, None)
        if got is None:
            raise DataError(f"{path}: empty file (expected header {','.join(header)})")
        if [h.strip() for h in got] != list(header):
            raise DataError(f"{path}: line 1: expected header {','.join(header)}")
        for row in reader:
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise DataError(f"{path}: line {reader.line_num}: expected {len(header)} "
                                f"fields, got {len(row)}")
            yield reader.line_num, row


def read_tracks(path) -> list[Track]:
    rows: dict[str, list[tuple[int, float, float]]] = {}
    for line, row in read_csv_rows(path, TRACK_HEADER):
        try:
            day, x, y = int(row[1]), float(row[2]), float(row[3])
        except ValueError as exc:
            raise DataError(f"{path}: line {line}: {exc}") from exc
        if not (math.isfinite(x) and math.isfinite(y)):
            raise DataError(f"{path}: line {line}: non-finite coordinate")
        rows.setdefault(row[0], []).append((day, x, y))
    tracks = []
    for tid, recs in rows.items():
        recs.sort()
        days = np.array([r[0] for r in recs])
        if np.any(np.diff(days) != 1):
            raise DataError(f"{path}: track {tid!r} days are not consecutive")
        tracks.append(Track(tid, int(days[0]), np.array([r[1:] for r in recs])))
    return tracks
