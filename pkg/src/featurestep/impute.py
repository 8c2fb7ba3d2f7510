"""
Stage-1 smoothing of irregular noisy fixes onto the daily grid.

Each coordinate follows a Brownian motion with variance ``q`` per day and
is observed with isotropic Gaussian error. The filter starts diffuse at the
first fix; joint path draws come from forward filtering, backward sampling
over the union of fix times and integer days.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy.optimize import minimize_scalar

from .errors import DataError, NumericalError, ParameterError
from .movement import Track, read_csv_rows
from .seeding import substream

DEFAULT_DEVICE_SD = {"argos_a": 15.0, "argos_b": 30.0, "gps": 0.05}
DEFAULT_MAX_GAP = 14.0
OBS_HEADER = ["id", "t_star", "x_km", "y_km", "device_class"]
IMPUTATION_HEADER = ["id", "k", "day", "x_km", "y_km"]

# search range for log q (km^2 per day)
_LOG_Q_BOUNDS = (math.log(1e-6), math.log(1e6))


@dataclass(frozen=True, eq=False)
class Observation:
    id: str
    t_star: float
    loc: np.ndarray
    device_class: str
    sd: float

    def __post_init__(self):
        if not self.sd > 0.0:
            raise ParameterError(f"observation sd must be positive, got {self.sd!r}")
        if not math.isfinite(self.t_star):
            raise ParameterError("observation time must be finite")
        object.__setattr__(self, "loc", np.asarray(self.loc, dtype=float).reshape(2))


@dataclass(frozen=True, eq=False)
class ImputedSegment:
    t0: int
    paths: np.ndarray  # (K, n_days, 2)

    @property
    def days(self) -> np.ndarray:
        return np.arange(self.t0, self.t0 + self.paths.shape[1])


@dataclass(frozen=True, eq=False)
class ImputationSet:
    id: str
    K: int
    segments: list

    def draw(self, k: int) -> list[tuple[int, np.ndarray]]:
        """``(t0, positions)`` per segment for imputation ``k``."""
        return [(s.t0, s.paths[k]) for s in self.segments]

    def tracks(self, k: int) -> list[Track]:
        return [Track(self.id, s.t0, s.paths[k]) for s in self.segments]

    @property
    def n_days(self) -> int:
        return sum(s.paths.shape[1] for s in self.segments)


def _sorted(obs: Sequence[Observation]) -> list[Observation]:
    return sorted(obs, key=lambda o: o.t_star)


def split_segments(obs: Sequence[Observation], max_gap: float = DEFAULT_MAX_GAP):
    """Split time-sorted fixes wherever consecutive fixes are over ``max_gap`` days apart."""
    obs = _sorted(obs)
    if not obs:
        return []
    out = [[obs[0]]]
    for prev, cur in zip(obs[:-1], obs[1:]):
        if cur.t_star - prev.t_star > max_gap:
            out.append([cur])
        else:
            out[-1].append(cur)
    return out


class _Nodes:
    """Merged time grid of one segment: fix times plus the integer days they span."""

    def __init__(self, obs: Sequence[Observation], with_days: bool = True):
        t_obs = np.array([o.t_star for o in obs])
        lo, hi = math.ceil(t_obs.min()), math.floor(t_obs.max())
        days = np.arange(lo, hi + 1, dtype=float) if with_days and lo <= hi else np.zeros(0)
        self.times = np.unique(np.concatenate([t_obs, days]))
        node_of = np.searchsorted(self.times, t_obs)
        self.obs_at = [[] for _ in self.times]
        for o, j in zip(obs, node_of):
            self.obs_at[j].append(o)
        self.day_nodes = np.searchsorted(self.times, days)
        self.first_day = int(lo) if len(days) else None


def _forward(nodes: _Nodes, q: float):
    """Diffuse-start filter; returns filtered moments and the log-likelihood."""
    n = len(nodes.times)
    m = np.zeros((n, 2))
    P = np.zeros(n)
    loglik = 0.0
    mean, var = None, math.inf
    for j in range(n):
        if j > 0:
            var = var + q * (nodes.times[j] - nodes.times[j - 1])
        for o in nodes.obs_at[j]:
            r2 = o.sd * o.sd
            if mean is None:
                mean, var = o.loc.copy(), r2
                continue
            s = var + r2
            resid = o.loc - mean
            loglik += -math.log(2.0 * math.pi * s) - 0.5 * float(resid @ resid) / s
            gain = var / s
            mean = mean + gain * resid
            var = var * (1.0 - gain)
        m[j] = mean
        P[j] = var
    return m, P, loglik


def _backward_gain(nodes: _Nodes, P: np.ndarray, q: float, j: int) -> float:
    dt = nodes.times[j + 1] - nodes.times[j]
    return P[j] / (P[j] + q * dt)


def segment_loglik(obs: Sequence[Observation], q: float) -> float:
    if len(obs) < 2:
        return 0.0
    return _forward(_Nodes(obs, with_days=False), q)[2]


def process_loglik(obs: Sequence[Observation], q: float, max_gap: float = DEFAULT_MAX_GAP) -> float:
    return sum(segment_loglik(seg, q) for seg in split_segments(obs, max_gap))


def estimate_process_variance(obs: Sequence[Observation], max_gap: float = DEFAULT_MAX_GAP) -> float:
    """Maximum-likelihood ``q`` by a bounded 1-D search over ``log q``."""
    if len(obs) < 2:
        raise DataError("cannot smooth: need at least 2 observations")
    segs = split_segments(obs, max_gap)
    if all(len(s) < 2 for s in segs):
        raise DataError("cannot smooth: no segment has two observations")
    res = minimize_scalar(lambda lq: -sum(segment_loglik(s, math.exp(lq)) for s in segs),
                          bounds=_LOG_Q_BOUNDS, method="bounded",
                          options={"xatol": 1e-6})
    return float(math.exp(res.x))


def smoother_moments(obs: Sequence[Observation], q: float, max_gap: float = DEFAULT_MAX_GAP):
    """Marginal smoothing mean and per-coordinate variance on the daily grid.

    Returns ``(t0, mean (n, 2), var (n,))`` per segment that spans a day.
    """
    out = []
    for seg in split_segments(obs, max_gap):
        nodes = _Nodes(seg)
        if nodes.first_day is None:
            continue
        m, P, _ = _forward(nodes, q)
        ms, Ps = m.copy(), P.copy()
        for j in range(len(nodes.times) - 2, -1, -1):
            J = _backward_gain(nodes, P, q, j)
            pred = P[j] + q * (nodes.times[j + 1] - nodes.times[j])
            ms[j] = m[j] + J * (ms[j + 1] - m[j])
            Ps[j] = P[j] + J * J * (Ps[j + 1] - pred)
        out.append((nodes.first_day, ms[nodes.day_nodes], Ps[nodes.day_nodes]))
    return out


def _sample_segment(nodes: _Nodes, m, P, q: float, rng: np.random.Generator) -> np.ndarray:
    n = len(nodes.times)
    z = rng.standard_normal((n, 2))
    x = np.empty((n, 2))
    x[-1] = m[-1] + math.sqrt(P[-1]) * z[-1]
    for j in range(n - 2, -1, -1):
        J = _backward_gain(nodes, P, q, j)
        var = P[j] * (1.0 - J)
        x[j] = m[j] + J * (x[j + 1] - m[j]) + math.sqrt(max(var, 0.0)) * z[j]
    return x[nodes.day_nodes]


def smooth_and_impute(obs: Sequence[Observation], K: int, q=None, seed: int = 0,
                      max_gap: float = DEFAULT_MAX_GAP) -> ImputationSet:
    """``K`` joint smoothing draws on the integer days spanned by the fixes.

    ``q`` is one process variance or one per draw; it defaults to the
    maximum-likelihood value. Draw ``k`` uses the substream
    ``impute/<id>/<k>`` of ``seed``.
    """
    obs = _sorted(obs)
    if len(obs) < 2:
        raise DataError("cannot smooth: need at least 2 observations")
    if K < 1:
        raise ParameterError("K must be at least 1")
    ids = {o.id for o in obs}
    if len(ids) != 1:
        raise DataError(f"observations mix individuals: {sorted(ids)}")
    tid = obs[0].id
    if q is None:
        q = estimate_process_variance(obs, max_gap)
    qs = np.broadcast_to(np.asarray(q, dtype=float), (K,))
    if not np.all(qs > 0.0):
        raise ParameterError(f"process variance must be positive, got {q!r}")
    segs = [_Nodes(seg) for seg in split_segments(obs, max_gap)]
    segs = [nd for nd in segs if nd.first_day is not None]
    if not segs:
        raise DataError(f"cannot smooth {tid!r}: fixes span no whole day")
    paths = [np.empty((K, len(nd.day_nodes), 2)) for nd in segs]
    filtered: dict = {}
    for k in range(K):
        rng = substream(seed, f"impute/{tid}/{k}")
        qk = float(qs[k])
        for j, nd in enumerate(segs):
            key = (j, qk)
            if key not in filtered:
                filtered[key] = _forward(nd, qk)[:2]
            m, P = filtered[key]
            paths[j][k] = _sample_segment(nd, m, P, qk, rng)
    for p in paths:
        if not np.all(np.isfinite(p)):
            raise NumericalError(f"non-finite imputation for {tid!r}")
    return ImputationSet(tid, K, [ImputedSegment(nd.first_day, p) for nd, p in zip(segs, paths)])


# ---------------------------------------------------------------------------
# population-level process variance

def _increments(groups: Iterable[Sequence[Observation]], max_gap: float):
    d2, dt, r2 = [], [], []
    for obs in groups:
        for seg in split_segments(obs, max_gap):
            for u, v in zip(seg[:-1], seg[1:]):
                diff = v.loc - u.loc
                d2.append(float(diff @ diff))
                dt.append(v.t_star - u.t_star)
                r2.append(u.sd * u.sd + v.sd * v.sd)
    return np.array(d2), np.array(dt), np.array(r2)


def increment_variance(groups: Iterable[Sequence[Observation]],
                       max_gap: float = DEFAULT_MAX_GAP) -> float:
    """Composite-likelihood ``q`` from displacements between consecutive fixes.

    Each displacement is treated as ``N(0, (q dt + r_1^2 + r_2^2) I)`` on
    its own. Only short lags enter, so slow mean reversion in the true
    paths, which drags the full-path estimate down, has little effect.
    """
    d2, dt, r2 = _increments(groups, max_gap)
    if len(d2) == 0:
        raise DataError("cannot smooth: no consecutive fixes")
    return _increment_mle(d2, dt, r2)


def _increment_mle(d2, dt, r2) -> float:
    def nll(lq):
        v = math.exp(lq) * dt + r2
        return float(np.sum(np.log(v) + 0.5 * d2 / v))

    res = minimize_scalar(nll, bounds=_LOG_Q_BOUNDS, method="bounded", options={"xatol": 1e-6})
    return float(math.exp(res.x))


def bootstrap_process_variance(obs_by_id: Mapping[str, Sequence[Observation]], n: int, seed: int,
                               max_gap: float = DEFAULT_MAX_GAP) -> np.ndarray:
    """``n`` increment estimates of ``q``, each on individuals resampled with replacement.

    Used to make the imputations proper: draw ``k`` is smoothed with the
    ``k``-th bootstrap value, so the spread of ``q`` reaches stage 2.
    """
    ids = sorted(obs_by_id)
    per_id = [_increments([obs_by_id[i]], max_gap) for i in ids]
    out = np.empty(n)
    for k in range(n):
        pick = substream(seed, f"impute/q/{k}").integers(0, len(ids), len(ids))
        d2, dt, r2 = (np.concatenate([per_id[j][c] for j in pick]) for c in range(3))
        if len(d2) == 0:
            raise DataError("cannot smooth: no consecutive fixes")
        out[k] = _increment_mle(d2, dt, r2)
    return out


Q_METHODS = ("bootstrap", "increments", "state_space")


def impute_population(obs_by_id: Mapping[str, Sequence[Observation]], K: int, seed: int,
                      q_method: str = "bootstrap", q: float | None = None,
                      max_gap: float = DEFAULT_MAX_GAP):
    """Impute every individual; returns ``(sets sorted by id, q per draw or per id)``.

    ``q_method``: ``bootstrap`` (pooled increment estimate, one bootstrap
    value per draw), ``increments`` (pooled, fixed), ``state_space``
    (per-individual maximum likelihood). A given ``q`` overrides all three.
    """
    if q_method not in Q_METHODS:
        raise ParameterError(f"unknown q_method {q_method!r}; expected one of {Q_METHODS}")
    ids = sorted(obs_by_id)
    if not ids:
        raise DataError("no observations")
    for i in ids:
        if len(obs_by_id[i]) < 2:
            raise DataError(f"cannot smooth {i!r}: need at least 2 observations")
    if q is not None:
        qs = {i: float(q) for i in ids}
    elif q_method == "bootstrap":
        draws = bootstrap_process_variance(obs_by_id, K, seed, max_gap)
        qs = {i: draws for i in ids}
    elif q_method == "increments":
        pooled = increment_variance([obs_by_id[i] for i in ids], max_gap)
        qs = {i: pooled for i in ids}
    else:
        qs = {i: estimate_process_variance(obs_by_id[i], max_gap) for i in ids}
    sets = [smooth_and_impute(obs_by_id[i], K, qs[i], seed, max_gap) for i in ids]
    return sets, qs


# ---------------------------------------------------------------------------
# I/O

def group_by_id(obs: Iterable[Observation]) -> dict[str, list[Observation]]:
    out: dict[str, list[Observation]] = {}
    for o in obs:
        out.setdefault(o.id, []).append(o)
    return out


def read_observations(path, device_sd: Mapping[str, float] = DEFAULT_DEVICE_SD) -> list[Observation]:
    out = []
    for line, row in read_csv_rows(path, OBS_HEADER):
        try:
            t, x, y = float(row[1]), float(row[2]), float(row[3])
        except ValueError as exc:
            raise DataError(f"{path}: line {line}: {exc}") from exc
        if not all(math.isfinite(v) for v in (t, x, y)):
            raise DataError(f"{path}: line {line}: non-finite value")
        dev = row[4].strip()
        if dev not in device_sd:
            raise DataError(f"{path}: line {line}: unknown device class {dev!r}")
        out.append(Observation(row[0], t, (x, y), dev, float(device_sd[dev])))
    return out


def write_observations(obs: Iterable[Observation], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(OBS_HEADER)
        for o in obs:
            w.writerow([o.id, f"{o.t_star:.6f}", f"{o.loc[0]:.6f}", f"{o.loc[1]:.6f}",
                        o.device_class])


def write_imputations(sets: Iterable[ImputationSet], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(IMPUTATION_HEADER)
        for s in sets:
            for k in range(s.K):
                for seg in s.segments:
                    for day, (x, y) in zip(seg.days, seg.paths[k]):
                        w.writerow([s.id, k, int(day), f"{x:.6f}", f"{y:.6f}"])


def read_imputations(path) -> list[ImputationSet]:
    """Inverse of :func:`write_imputations`; day breaks start new segments."""
    rows: dict[str, dict[int, list]] = {}
    for line, row in read_csv_rows(path, IMPUTATION_HEADER):
        try:
            k, day, x, y = int(row[1]), int(row[2]), float(row[3]), float(row[4])
        except ValueError as exc:
            raise DataError(f"{path}: line {line}: {exc}") from exc
        if not (math.isfinite(x) and math.isfinite(y)):
            raise DataError(f"{path}: line {line}: non-finite coordinate")
        rows.setdefault(row[0], {}).setdefault(k, []).append((day, x, y))
    out = []
    for tid, by_k in rows.items():
        ks = sorted(by_k)
        if ks != list(range(len(ks))):
            raise DataError(f"{path}: {tid!r}: imputation indices must run 0..K-1")
        day_sets = []
        for k in ks:
            by_k[k].sort()
            day_sets.append(np.array([r[0] for r in by_k[k]]))
        days = day_sets[0]
        if any(len(d) != len(days) or np.any(d != days) for d in day_sets):
            raise DataError(f"{path}: {tid!r}: imputations cover different days")
        if len(np.unique(days)) != len(days):
            raise DataError(f"{path}: {tid!r}: duplicate day")
        xy = np.stack([np.array([r[1:] for r in by_k[k]]) for k in ks])
        cuts = np.flatnonzero(np.diff(days) != 1) + 1
        bounds = np.concatenate([[0], cuts, [len(days)]])
        segs = [ImputedSegment(int(days[i]), xy[:, i:j]) for i, j in zip(bounds[:-1], bounds[1:])]
        out.append(ImputationSet(tid, len(ks), segs))
    return out


def thin_to_observations(tracks: Iterable[Track], rng: np.random.Generator,
                         gaps: Sequence[int] = (2, 3, 4), device_class: str = "argos_b",
                         device_sd: Mapping[str, float] = DEFAULT_DEVICE_SD) -> list[Observation]:
    """Noisy fixes on a random subset of days, consecutive fixes ``gaps`` days apart.

    The first and last days of every track are always observed.
    """
    sd = float(device_sd[device_class])
    out = []
    for tr in tracks:
        n = len(tr)
        idx = [0]
        while True:
            nxt = idx[-1] + int(rng.choice(gaps))
            if nxt >= n - 1:
                break
            idx.append(nxt)
        if n > 1:
            idx.append(n - 1)
        noise = sd * rng.standard_normal((len(idx), 2))
        for j, e in zip(idx, noise):
            out.append(Observation(tr.id, float(tr.t0 + j), tr.positions[j] + e, device_class, sd))
    return out
