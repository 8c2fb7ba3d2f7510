"""
Stage-2 MCMC over the step model given daily path imputations.

Blocks per iteration: imputation indices, labels (Gibbs), log sigma2 and
log tau2, season endpoints, the two centres and the two covariance spectra
(random-walk Metropolis). Per-individual log-likelihoods are cached so each
block re-evaluates only the individuals its parameters touch.

Covariances are ``R(phi) diag(exp l1, exp l2) R(phi)'`` with ``l1 >= l2``
and ``phi`` in ``[0, pi)``. Label switching is ruled out by requiring the
CS centre to lie west of the SB centre; the constraint lives in the
sampler, so the log-posterior itself is symmetric under relabelling.
"""
from __future__ import annotations

import csv
import math
import pickle
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.cluster.vq import kmeans2
from scipy.special import expit

from .errors import DataError, NumericalError, ParameterError
from .geometry import DynamicFeature, rotation
from .impute import ImputationSet
from .movement import CS, SB, ModelParams, PathTable, Track, batch_loglik
from .rsf import DAYS_PER_YEAR, Season
from .seeding import substream

BLOCKS = ("imputation", "z", "sigma2", "tau2", "a", "b", "center", "cov")
_TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class PriorConfig:
    sigma2_shape: float = 6.0
    sigma2_scale: float = 1125.0
    tau2_shape: float = 6.0
    tau2_scale: float = 32000.0
    a_mean: float = 135.0
    a_sd: float = 14.0
    b_mean: float = 319.0
    b_sd: float = 14.0
    p_cs: float = 0.5
    center_mean: tuple = (0.0, 0.0)
    center_sd: float = 2000.0
    log_lam_mean: float = math.log(1e4)
    log_lam_sd: float = 2.0

    def __post_init__(self):
        for name in ("sigma2_shape", "sigma2_scale", "tau2_shape", "tau2_scale", "a_sd", "b_sd",
                     "center_sd", "log_lam_sd"):
            if not getattr(self, name) > 0.0:
                raise ParameterError(f"prior {name} must be positive")
        if not 0.0 < self.p_cs < 1.0:
            raise ParameterError("prior p_cs must lie in (0, 1)")
        object.__setattr__(self, "center_mean", tuple(float(c) for c in self.center_mean))

    @property
    def tau2_mean(self) -> float:
        return self.tau2_scale / (self.tau2_shape - 1.0) if self.tau2_shape > 1.0 else self.tau2_scale


@dataclass(frozen=True)
class MCMCConfig:
    iterations: int = 20000
    burn_in: int = 5000
    thin: int = 1
    fixed: frozenset = frozenset()
    use_likelihood: bool = True
    adapt: bool = True
    # 1: every id draws a fresh index each iteration. B > 1 with
    # ``shared_imputation``: one population-wide index held for B iterations.
    imputation_block: int = 1
    shared_imputation: bool = False

    def __post_init__(self):
        if self.iterations < 0 or not 0 <= self.burn_in <= self.iterations:
            raise ParameterError("need 0 <= burn_in <= iterations")
        if self.thin < 1:
            raise ParameterError("thin must be at least 1")
        if self.imputation_block < 1:
            raise ParameterError("imputation_block must be at least 1")
        bad = set(self.fixed) - set(BLOCKS)
        if bad:
            raise ParameterError(f"unknown MCMC blocks: {sorted(bad)}")
        object.__setattr__(self, "fixed", frozenset(self.fixed))


# ---------------------------------------------------------------------------
# parameterisation

def spectral_to_cov(spec) -> np.ndarray:
    l1, l2, phi = spec
    r = rotation(phi)
    return (r * np.exp([l1, l2])) @ r.T


def cov_to_spectral(cov) -> np.ndarray:
    w, v = np.linalg.eigh(np.asarray(cov, dtype=float))
    phi = math.atan2(v[1, 1], v[0, 1]) % math.pi
    return np.array([math.log(w[1]), math.log(w[0]), phi])


@dataclass(eq=False)
class ChainState:
    sigma2: float
    tau2: float
    a: float
    b: float
    cen: np.ndarray   # (2, 2), row = label
    spec: np.ndarray  # (2, 3), row = label: l1, l2, phi
    z: np.ndarray     # (N,) int64, 1 = CS
    k: np.ndarray     # (N,) imputation index

    def copy(self) -> "ChainState":
        return ChainState(self.sigma2, self.tau2, self.a, self.b, self.cen.copy(),
                          self.spec.copy(), self.z.copy(), self.k.copy())

    def params(self) -> ModelParams:
        return ModelParams(self.sigma2, self.tau2, Season(self.a, self.b),
                           self.cen[CS], self.cen[SB],
                           spectral_to_cov(self.spec[CS]), spectral_to_cov(self.spec[SB]))

    def mixture(self):
        prec = np.empty((2, 2, 2))
        for lab in (SB, CS):
            l1, l2, phi = self.spec[lab]
            r = rotation(phi)
            prec[lab] = (r * np.exp([-l1, -l2])) @ r.T
        return prec, np.ascontiguousarray(self.cen)

    @classmethod
    def from_params(cls, params: ModelParams, z, k=None) -> "ChainState":
        z = np.asarray(z, dtype=np.int64)
        cen = np.empty((2, 2))
        cen[CS], cen[SB] = params.center_cs, params.center_sb
        spec = np.empty((2, 3))
        spec[CS], spec[SB] = cov_to_spectral(params.cov_cs), cov_to_spectral(params.cov_sb)
        k = np.zeros(len(z), dtype=np.int64) if k is None else np.asarray(k, dtype=np.int64)
        return cls(params.sigma2, params.tau2, params.season.a, params.season.b, cen, spec, z, k)

    def swapped(self) -> "ChainState":
        """Exchange the two sub-populations and flip every label."""
        return ChainState(self.sigma2, self.tau2, self.a, self.b, self.cen[::-1].copy(),
                          self.spec[::-1].copy(), 1 - self.z, self.k.copy())


# ---------------------------------------------------------------------------
# priors, on the sampler's coordinates (log sigma2 and log tau2)

def _norm_lpdf(x, mean, sd) -> float:
    u = (x - mean) / sd
    return -0.5 * u * u - math.log(sd) - 0.5 * math.log(_TWO_PI)


def _log_ig_on_log(u: float, shape: float, scale: float) -> float:
    """Inverse-gamma log density of ``exp(u)`` including the ``exp(u)`` Jacobian."""
    return shape * math.log(scale) - math.lgamma(shape) - shape * u - scale * math.exp(-u)


def lp_season(a: float, b: float, pr: PriorConfig) -> float:
    if not (0.0 <= a < b < DAYS_PER_YEAR):
        return -math.inf
    return _norm_lpdf(a, pr.a_mean, pr.a_sd) + _norm_lpdf(b, pr.b_mean, pr.b_sd)


def lp_center(c, pr: PriorConfig) -> float:
    return (_norm_lpdf(c[0], pr.center_mean[0], pr.center_sd)
            + _norm_lpdf(c[1], pr.center_mean[1], pr.center_sd))


def lp_spec(s, pr: PriorConfig) -> float:
    l1, l2, phi = s
    if l1 < l2 or not 0.0 <= phi < math.pi:
        return -math.inf
    return (_norm_lpdf(l1, pr.log_lam_mean, pr.log_lam_sd)
            + _norm_lpdf(l2, pr.log_lam_mean, pr.log_lam_sd) + math.log(2.0 / math.pi))


def lp_labels(z, pr: PriorConfig) -> float:
    n1 = int(np.sum(z))
    return n1 * math.log(pr.p_cs) + (len(z) - n1) * math.log1p(-pr.p_cs)


def log_prior(state: ChainState, pr: PriorConfig) -> float:
    return (_log_ig_on_log(math.log(state.sigma2), pr.sigma2_shape, pr.sigma2_scale)
            + _log_ig_on_log(math.log(state.tau2), pr.tau2_shape, pr.tau2_scale)
            + lp_season(state.a, state.b, pr)
            + lp_center(state.cen[CS], pr) + lp_center(state.cen[SB], pr)
            + lp_spec(state.spec[CS], pr) + lp_spec(state.spec[SB], pr)
            + lp_labels(state.z, pr))


# ---------------------------------------------------------------------------
# data

class PathData:
    """All imputations of all individuals in one step table.

    Row block ``offset[i] + k`` holds imputation ``k`` of individual ``i``.
    ``cum[r, d]`` counts non-initial steps of block ``r`` with day-of-year
    below ``d``, which tells the season updates whom a move can affect.
    """

    def __init__(self, imputations: Sequence[ImputationSet], feature: DynamicFeature):
        if not imputations:
            raise DataError("no individuals to fit")
        for s in imputations:
            if s.K < 1:
                raise DataError(f"individual {s.id!r} has no imputations")
        self.ids = [s.id for s in imputations]
        if len(set(self.ids)) != len(self.ids):
            raise DataError("duplicate individual ids")
        self.K = np.array([s.K for s in imputations], dtype=np.int64)
        blocks = [s.draw(k) for s in imputations for k in range(s.K)]
        self.table = PathTable.build(blocks, feature)
        self.offset = np.concatenate([[0], np.cumsum(self.K)[:-1]]).astype(np.int64)
        st = self.table.starts
        counts = np.zeros((len(blocks), DAYS_PER_YEAR + 1), dtype=np.int64)
        block_of = np.repeat(np.arange(len(blocks)), np.diff(st))
        step = ~self.table.first
        np.add.at(counts, (block_of[step], self.table.doy[step].astype(np.int64) + 1), 1)
        self.cum = np.cumsum(counts, axis=1)
        self.mean_positions = np.array([
            np.concatenate([p for _, p in s.draw(0)]).mean(axis=0) for s in imputations])

    @property
    def n(self) -> int:
        return len(self.ids)

    def rows(self, k) -> np.ndarray:
        return self.offset + np.asarray(k, dtype=np.int64)

    def spans(self, k):
        r = self.rows(k)
        return self.table.starts[r], self.table.starts[r + 1]

    def steps_between(self, k, lo_day: int, hi_day: int) -> np.ndarray:
        """Per individual: any step with integer day-of-year in ``[lo_day, hi_day]``."""
        lo_day = max(lo_day, 0)
        hi_day = min(hi_day, DAYS_PER_YEAR - 1)
        if hi_day < lo_day:
            return np.zeros(self.n, dtype=np.bool_)
        r = self.rows(k)
        return self.cum[r, hi_day + 1] - self.cum[r, lo_day] > 0


def imputations_from_tracks(tracks: Sequence[Track]) -> list[ImputationSet]:
    """Wrap known daily paths as single-imputation sets (tracks sharing an id become segments)."""
    from .impute import ImputedSegment

    by_id: dict[str, list] = {}
    for tr in tracks:
        by_id.setdefault(tr.id, []).append(ImputedSegment(tr.t0, tr.positions[None]))
    return [ImputationSet(tid, 1, sorted(segs, key=lambda s: s.t0)) for tid, segs in by_id.items()]


def loglik_vector(data: PathData, state: ChainState, labels=None, active=None, out=None) -> np.ndarray:
    prec, cen = state.mixture()
    labels = state.z if labels is None else labels
    return batch_loglik(data.table, state.sigma2, state.tau2, state.a, state.b, prec, cen,
                        labels, active, out, data.spans(state.k))


def log_posterior(data: PathData | None, state: ChainState, priors: PriorConfig) -> float:
    lp = log_prior(state, priors)
    if data is not None and math.isfinite(lp):
        lp += float(np.sum(loglik_vector(data, state)))
    return lp


def z_log_odds(tracks, params: ModelParams, feature: DynamicFeature, p_cs: float = 0.5) -> float:
    """Log posterior odds of CS membership for one individual.

    ``tracks`` is a :class:`Track` or a list of segments of the same individual.
    """
    if isinstance(tracks, Track):
        tracks = [tracks]
    table = PathTable.build([[(tr.t0, tr.positions) for tr in tracks]], feature)
    prec, cen = _params_mixture(params)
    l1 = batch_loglik(table, params.sigma2, params.tau2, params.season.a, params.season.b,
                      prec, cen, [CS])[0]
    l0 = batch_loglik(table, params.sigma2, params.tau2, params.season.a, params.season.b,
                      prec, cen, [SB])[0]
    return float(l1 - l0 + math.log(p_cs) - math.log1p(-p_cs))


def z_full_conditional(tracks, params: ModelParams, feature: DynamicFeature,
                       p_cs: float = 0.5) -> float:
    return float(expit(z_log_odds(tracks, params, feature, p_cs)))


def _params_mixture(params: ModelParams):
    from .movement import mixture_arrays

    return mixture_arrays(params.center_cs, params.cov_cs, params.center_sb, params.cov_sb)


# ---------------------------------------------------------------------------
# initialisation

def initialize(data: PathData, priors: PriorConfig, seed: int) -> ChainState:
    """2-means on per-individual mean positions; CS is the western cluster."""
    pts = data.mean_positions
    rng = substream(seed, "init")
    if data.n >= 2:
        _, assign = kmeans2(pts, 2, seed=rng, minit="++")
    else:
        assign = np.zeros(data.n, dtype=int)
    centers = []
    for c in (0, 1):
        members = pts[assign == c]
        centers.append(members.mean(axis=0) if len(members) else pts.mean(axis=0))
    centers = np.array(centers)
    if np.allclose(centers[0], centers[1]):
        centers = centers + np.array([[-1.0, 0.0], [1.0, 0.0]])
    west = int(np.argmin(centers[:, 0]))
    if centers[0, 0] == centers[1, 0]:
        centers[1 - west, 0] += 1.0
    z = np.where(assign == west, CS, SB).astype(np.int64)
    cen = np.empty((2, 2))
    cen[CS], cen[SB] = centers[west], centers[1 - west]

    st = data.table.starts
    x, prev, first = data.table.x, data.table.prev, data.table.first
    disp = (x - prev)[~first]
    sigma2 = float(np.mean(np.sum(disp * disp, axis=1)) / 2.0) if len(disp) else priors.sigma2_scale
    sigma2 = max(sigma2, 1e-3)

    spec = np.empty((2, 3))
    floor = math.exp(priors.log_lam_mean)
    for lab in (CS, SB):
        idx = np.flatnonzero(z == lab)
        rows = data.offset[idx]
        pos = [x[st[r]:st[r + 1]] for r in rows]
        pos = np.concatenate(pos) if pos else np.zeros((0, 2))
        if len(pos) > 2:
            cov = np.cov(pos.T) + 1.0 * np.eye(2)
        else:
            cov = floor * np.eye(2)
        spec[lab] = cov_to_spectral(cov)
    return ChainState(sigma2, priors.tau2_mean, priors.a_mean, priors.b_mean, cen, spec, z,
                      np.zeros(data.n, dtype=np.int64))


# ---------------------------------------------------------------------------
# sampler

_TARGET_1D = 0.44
_TARGET_ND = 0.23
_START_SCALE = {"sigma2": 0.05, "tau2": 0.2, "a": 2.0, "b": 2.0, "center": 10.0, "cov": 0.05}
_DIM = {"sigma2": 1, "tau2": 1, "a": 1, "b": 1, "center": 2, "cov": 3}


@dataclass(eq=False)
class PosteriorSamples:
    ids: list
    iters: np.ndarray
    sigma2: np.ndarray
    tau2: np.ndarray
    a: np.ndarray
    b: np.ndarray
    cen: np.ndarray   # (n, 2, 2)
    spec: np.ndarray  # (n, 2, 3)
    z: np.ndarray     # (n, N)
    init: ChainState
    seed: int = 0
    chain: int = 0
    iterations: int = 0
    burn_in: int = 0
    thin: int = 1
    acceptance: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.iters)

    def column(self, name: str) -> np.ndarray:
        if name == "sigma_mu":
            return np.sqrt(self.sigma2)
        if name == "tau":
            return np.sqrt(self.tau2)
        return getattr(self, name)

    def state(self, j: int) -> ChainState:
        return ChainState(float(self.sigma2[j]), float(self.tau2[j]), float(self.a[j]),
                          float(self.b[j]), self.cen[j].copy(), self.spec[j].copy(),
                          self.z[j].astype(np.int64), np.zeros(len(self.ids), dtype=np.int64))

    @classmethod
    def concat(cls, parts: Sequence["PosteriorSamples"]) -> "PosteriorSamples":
        first = parts[0]
        cat = lambda name: np.concatenate([getattr(p, name) for p in parts])  # noqa: E731
        return replace(first, iters=cat("iters"), sigma2=cat("sigma2"), tau2=cat("tau2"),
                       a=cat("a"), b=cat("b"), cen=cat("cen"), spec=cat("spec"), z=cat("z"))


class Chain:
    """One resumable Metropolis-within-Gibbs chain.

    Everything except the data pickles, generator state included, so a
    chain restored from a checkpoint continues bit-identically.
    """

    def __init__(self, data: PathData | None, priors: PriorConfig, config: MCMCConfig,
                 seed: int, chain: int = 0, init: ChainState | None = None):
        self.priors = priors
        self.config = config
        self.seed = int(seed)
        self.chain = int(chain)
        self.data = data
        if init is None:
            if data is None:
                raise ParameterError("an initial state is required without data")
            init = initialize(data, priors, seed)
        self.init = init.copy()
        self.state = init.copy()
        self.rng = substream(seed, f"chain/{chain}")
        self.it = 0
        self.log_scale = {k: math.log(v) for k, v in _START_SCALE.items()}
        self.accepts = {k: 0 for k in _START_SCALE}
        self.tries = {k: 0 for k in _START_SCALE}
        self.records: list[tuple] = []
        self._check_init()

    # -- persistence --------------------------------------------------------
    def __getstate__(self):
        d = dict(self.__dict__)
        d["data"] = None
        d.pop("ll", None)
        return d

    def __setstate__(self, d):
        self.__dict__.update(d)

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            pickle.dump(self, fh, protocol=4)

    @classmethod
    def restore(cls, path, data: PathData | None) -> "Chain":
        with open(path, "rb") as fh:
            chain = pickle.load(fh)
        chain.data = data
        chain._refresh()
        return chain

    # -- helpers ------------------------------------------------------------
    @property
    def _uses_data(self) -> bool:
        return self.config.use_likelihood and self.data is not None

    def _refresh(self) -> None:
        if self._uses_data:
            self.ll = loglik_vector(self.data, self.state)
        else:
            self.ll = np.zeros(len(self.state.z))

    def _check_init(self) -> None:
        s, pr = self.state, self.priors
        parts = {
            "sigma2": _log_ig_on_log(math.log(s.sigma2), pr.sigma2_shape, pr.sigma2_scale)
            if s.sigma2 > 0 else -math.inf,
            "tau2": _log_ig_on_log(math.log(s.tau2), pr.tau2_shape, pr.tau2_scale)
            if s.tau2 > 0 else -math.inf,
            "season (a, b)": lp_season(s.a, s.b, pr),
            "center_cs": lp_center(s.cen[CS], pr),
            "center_sb": lp_center(s.cen[SB], pr),
            "cov_cs": lp_spec(s.spec[CS], pr),
            "cov_sb": lp_spec(s.spec[SB], pr),
        }
        for name, v in parts.items():
            if not math.isfinite(v):
                raise NumericalError(f"non-finite log-posterior at initialisation: prior on {name}")
        if not s.cen[CS, 0] < s.cen[SB, 0]:
            raise NumericalError("initial CS centre must lie west of the SB centre")
        self._refresh()
        bad = np.flatnonzero(~np.isfinite(self.ll))
        if len(bad):
            names = [self.data.ids[i] for i in bad[:5]]
            raise NumericalError(
                f"non-finite log-posterior at initialisation: likelihood of individuals {names}")

    def _eval(self, state: ChainState, labels=None, active=None) -> np.ndarray:
        out = self.ll.copy()
        if not self._uses_data:
            return out
        return loglik_vector(self.data, state, labels, active, out)

    def _metropolis(self, block: str, log_ratio: float) -> bool:
        self.tries[block] += 1
        ok = log_ratio >= 0.0 or self.rng.random() < math.exp(log_ratio)
        if ok:
            self.accepts[block] += 1
        return ok

    def _adapt(self, block: str, accepted: bool) -> None:
        if self.config.adapt and self.it <= self.config.burn_in:
            target = _TARGET_1D if _DIM[block] == 1 else _TARGET_ND
            self.log_scale[block] += (float(accepted) - target) * (self.it + 1) ** -0.6

    def _step(self, block: str) -> float:
        return math.exp(self.log_scale[block])

    # -- blocks -------------------------------------------------------------
    def _update_imputation(self) -> None:
        K = self.data.K if self.data is not None else None
        if K is None or np.all(K == 1):
            return
        if (self.it - 1) % self.config.imputation_block:
            return
        if self.config.shared_imputation:
            self.state.k = (int(self.rng.integers(0, K.max())) % K).astype(np.int64)
        else:
            self.state.k = self.rng.integers(0, K).astype(np.int64)
        self._refresh()

    def _update_z(self) -> None:
        s = self.state
        alt = self._eval(s, labels=1 - s.z)
        l_cs = np.where(s.z == CS, self.ll, alt)
        l_sb = np.where(s.z == CS, alt, self.ll)
        prior = math.log(self.priors.p_cs) - math.log1p(-self.priors.p_cs)
        with np.errstate(invalid="ignore"):
            p = expit(l_cs - l_sb + prior)
        p = np.where(np.isnan(p), self.priors.p_cs, p)
        new = np.where(self.rng.random(len(s.z)) < p, CS, SB).astype(np.int64)
        self.ll = np.where(new == s.z, self.ll, alt)
        s.z = new

    def _update_log_scalar(self, block: str) -> None:
        s, pr = self.state, self.priors
        shape, scale = ((pr.sigma2_shape, pr.sigma2_scale) if block == "sigma2"
                        else (pr.tau2_shape, pr.tau2_scale))
        u = math.log(getattr(s, block))
        u_new = u + self._step(block) * self.rng.standard_normal()
        prop = s.copy()
        setattr(prop, block, math.exp(u_new))
        ll_new = self._eval(prop)
        ratio = (_log_ig_on_log(u_new, shape, scale) - _log_ig_on_log(u, shape, scale)
                 + float(np.sum(ll_new) - np.sum(self.ll)))
        ok = self._metropolis(block, ratio) if math.isfinite(ratio) else self._metropolis(block, -math.inf)
        if ok:
            setattr(s, block, math.exp(u_new))
            self.ll = ll_new
        self._adapt(block, ok)

    def _update_season(self, block: str) -> None:
        s, pr = self.state, self.priors
        old = getattr(s, block)
        new = old + self._step(block) * self.rng.standard_normal()
        a_new, b_new = (new, s.b) if block == "a" else (s.a, new)
        lp = lp_season(a_new, b_new, pr)
        if not math.isfinite(lp):
            self._metropolis(block, -math.inf)
            self._adapt(block, False)
            return
        lo, hi = min(old, new), max(old, new)
        if block == "a":  # in season iff a < doy
            d_lo, d_hi = math.floor(lo) + 1, math.floor(hi)
        else:             # in season iff doy < b
            d_lo, d_hi = math.ceil(lo), math.ceil(hi) - 1
        prop = s.copy()
        setattr(prop, block, new)
        ll_new = self.ll
        if self._uses_data:
            active = self.data.steps_between(s.k, d_lo, d_hi)
            if active.any():
                ll_new = self._eval(prop, active=active)
        ratio = lp - lp_season(s.a, s.b, pr) + float(np.sum(ll_new) - np.sum(self.ll))
        ok = self._metropolis(block, ratio if math.isfinite(ratio) else -math.inf)
        if ok:
            setattr(s, block, new)
            self.ll = ll_new
        self._adapt(block, ok)

    def _update_center(self, lab: int) -> None:
        s, pr = self.state, self.priors
        prop = s.copy()
        prop.cen[lab] = s.cen[lab] + self._step("center") * self.rng.standard_normal(2)
        if not prop.cen[CS, 0] < prop.cen[SB, 0]:
            self._metropolis("center", -math.inf)
            self._adapt("center", False)
            return
        ll_new = self._eval(prop, active=s.z == lab)
        ratio = (lp_center(prop.cen[lab], pr) - lp_center(s.cen[lab], pr)
                 + float(np.sum(ll_new) - np.sum(self.ll)))
        ok = self._metropolis("center", ratio if math.isfinite(ratio) else -math.inf)
        if ok:
            s.cen = prop.cen
            self.ll = ll_new
        self._adapt("center", ok)

    def _update_cov(self, lab: int) -> None:
        s, pr = self.state, self.priors
        prop = s.copy()
        step = self._step("cov") * self.rng.standard_normal(3)
        new = s.spec[lab] + step
        new[2] = new[2] % math.pi
        prop.spec[lab] = new
        lp_new = lp_spec(new, pr)
        if not math.isfinite(lp_new):
            self._metropolis("cov", -math.inf)
            self._adapt("cov", False)
            return
        ll_new = self._eval(prop, active=s.z == lab)
        ratio = lp_new - lp_spec(s.spec[lab], pr) + float(np.sum(ll_new) - np.sum(self.ll))
        ok = self._metropolis("cov", ratio if math.isfinite(ratio) else -math.inf)
        if ok:
            s.spec = prop.spec
            self.ll = ll_new
        self._adapt("cov", ok)

    def iterate(self) -> None:
        self.it += 1
        fixed = self.config.fixed
        if "imputation" not in fixed:
            self._update_imputation()
        if "z" not in fixed:
            self._update_z()
        for block in ("sigma2", "tau2"):
            if block not in fixed:
                self._update_log_scalar(block)
        for block in ("a", "b"):
            if block not in fixed:
                self._update_season(block)
        if "center" not in fixed:
            self._update_center(CS)
            self._update_center(SB)
        if "cov" not in fixed:
            self._update_cov(CS)
            self._update_cov(SB)
        cfg = self.config
        if self.it > cfg.burn_in and (self.it - cfg.burn_in) % cfg.thin == 0:
            s = self.state
            self.records.append((self.it, s.sigma2, s.tau2, s.a, s.b, s.cen.copy(),
                                 s.spec.copy(), s.z.astype(np.int8)))

    def run(self, until: int | None = None, checkpoint=None, checkpoint_every: int = 0) -> "Chain":
        until = self.config.iterations if until is None else min(until, self.config.iterations)
        while self.it < until:
            self.iterate()
            if checkpoint is not None and checkpoint_every and self.it % checkpoint_every == 0:
                self.save(checkpoint)
        return self

    def samples(self) -> PosteriorSamples:
        n_ind = len(self.state.z)
        rec = self.records
        ids = self.data.ids if self.data is not None else [str(i + 1) for i in range(n_ind)]
        acc = {k: self.accepts[k] / self.tries[k] for k in self.tries if self.tries[k]}
        return PosteriorSamples(
            ids=list(ids),
            iters=np.array([r[0] for r in rec], dtype=np.int64),
            sigma2=np.array([r[1] for r in rec]), tau2=np.array([r[2] for r in rec]),
            a=np.array([r[3] for r in rec]), b=np.array([r[4] for r in rec]),
            cen=np.array([r[5] for r in rec]).reshape(-1, 2, 2),
            spec=np.array([r[6] for r in rec]).reshape(-1, 2, 3),
            z=np.array([r[7] for r in rec], dtype=np.int8).reshape(-1, n_ind),
            init=self.init.copy(), seed=self.seed, chain=self.chain,
            iterations=self.config.iterations, burn_in=self.config.burn_in,
            thin=self.config.thin, acceptance=acc)


def mcmc_fit(imputations: Sequence[ImputationSet] | PathData, feature: DynamicFeature | None,
             priors: PriorConfig = PriorConfig(), config: MCMCConfig = MCMCConfig(),
             seed: int = 0, chain: int = 0, init: ChainState | None = None) -> PosteriorSamples:
    data = imputations if isinstance(imputations, PathData) else PathData(imputations, feature)
    return Chain(data, priors, config, seed, chain, init).run().samples()


# ---------------------------------------------------------------------------
# summaries and output

SUMMARY_ROWS = ("sigma_mu2", "tau2", "sigma_mu", "tau", "a", "b")
_SUMMARY_SOURCE = {"sigma_mu2": "sigma2", "tau2": "tau2", "sigma_mu": "sigma_mu", "tau": "tau",
                   "a": "a", "b": "b"}


def summarize(samples: Sequence[PosteriorSamples]) -> list[dict]:
    """Medians and equal-tailed 95% intervals, chains pooled."""
    pooled = PosteriorSamples.concat(list(samples))
    rows = []
    for name in SUMMARY_ROWS:
        v = pooled.column(_SUMMARY_SOURCE[name])
        if len(v):
            lo, med, hi = np.percentile(v, [2.5, 50.0, 97.5])
        else:
            lo = med = hi = float("nan")
        rows.append({"parameter": name, "median": med, "lower_2.5": lo, "upper_97.5": hi})
    return rows


def chain_header(n_ind: int) -> list[str]:
    spec = [f"{p}_{lab}" for lab in ("cs", "sb") for p in ("log_lam1", "log_lam2", "phi")]
    return (["iter", "sigma_mu2", "tau2", "a", "b", "cx_cs", "cy_cs", "cx_sb", "cy_sb"] + spec
            + [f"z_{i + 1}" for i in range(n_ind)])


def _fmt(v: float) -> str:
    return repr(float(v))


def write_chain(samples: PosteriorSamples, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(chain_header(len(samples.ids)))
        for j in range(len(samples)):
            c, sp = samples.cen[j], samples.spec[j]
            w.writerow([int(samples.iters[j])]
                       + [_fmt(v) for v in (samples.sigma2[j], samples.tau2[j], samples.a[j],
                                            samples.b[j], c[CS, 0], c[CS, 1], c[SB, 0], c[SB, 1])]
                       + [_fmt(v) for v in sp[CS]] + [_fmt(v) for v in sp[SB]]
                       + [int(v) for v in samples.z[j]])


def read_chain(path, ids: Sequence[str]) -> PosteriorSamples:
    """Chain CSV back into samples (metadata other than ids is not stored in the file)."""
    from .movement import read_csv_rows

    header = chain_header(len(ids))
    recs = []
    for line, row in read_csv_rows(path, header):
        try:
            recs.append([float(v) for v in row])
        except ValueError as exc:
            raise DataError(f"{path}: line {line}: {exc}") from exc
    arr = np.array(recs).reshape(-1, len(header))
    cen = np.empty((len(arr), 2, 2))
    cen[:, CS] = arr[:, 5:7]
    cen[:, SB] = arr[:, 7:9]
    spec = np.empty((len(arr), 2, 3))
    spec[:, CS] = arr[:, 9:12]
    spec[:, SB] = arr[:, 12:15]
    dummy = ChainState(1.0, 1.0, 0.0, 1.0, np.zeros((2, 2)), np.zeros((2, 3)),
                       np.zeros(len(ids), dtype=np.int64), np.zeros(len(ids), dtype=np.int64))
    return PosteriorSamples(list(ids), arr[:, 0].astype(np.int64), arr[:, 1], arr[:, 2], arr[:, 3],
                            arr[:, 4], cen, spec, arr[:, 15:].astype(np.int8), dummy)


def write_summary(rows: Sequence[dict], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["parameter", "median", "lower_2.5", "upper_97.5"])
        for r in rows:
            w.writerow([r["parameter"]] + [f"{r[k]:.6g}" for k in ("median", "lower_2.5", "upper_97.5")])
