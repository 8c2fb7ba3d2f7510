import math

import numpy as np
import pytest
from scipy import stats

from featurestep.errors import DataError, NumericalError, ParameterError
from featurestep.impute import ImputationSet, ImputedSegment
from featurestep.inference import (Chain, ChainState, MCMCConfig, PathData, PosteriorSamples,
                                   PriorConfig, chain_header, cov_to_spectral,
                                   imputations_from_tracks, initialize, log_posterior, mcmc_fit,
                                   read_chain, spectral_to_cov, summarize, write_chain,
                                   write_summary, z_full_conditional, z_log_odds)
from featurestep.movement import CS, SB, ModelParams, Track, log_path_likelihood, simulate_linearized
from featurestep.rsf import Season
from featurestep.scenarios import default_params, ice_edge_feature, simulate_population

FEATURE = ice_edge_feature()


def small_population(n=6, days=40, seed=3, **kw):
    params = default_params(**kw)
    tracks, labels = simulate_population(params, FEATURE, n, days, seed)
    return params, tracks, labels


def test_spectral_roundtrip():
    for spec in ([9.0, 8.0, 0.3], [10.0, 7.5, 2.9], [8.0, 8.0 - 1e-6, 1.0]):
        cov = spectral_to_cov(spec)
        back = cov_to_spectral(cov)
        assert np.allclose(spectral_to_cov(back), cov, rtol=1e-9)
        assert back[0] >= back[1] and 0.0 <= back[2] < math.pi


def test_z_conditional_symmetric_components_is_half():
    cov = np.diag([5000.0, 3000.0])
    params = ModelParams(272.0, 8600.0, Season(69, 337), (10.0, 0.0), (10.0, 0.0), cov, cov)
    tr = simulate_linearized(params, CS, FEATURE, 100, 30, 1)
    assert z_full_conditional(tr, params, FEATURE) == 0.5


def test_z_conditional_decisive_for_tight_separated_centres():
    params = default_params(separation=1000.0).replace(cov_cs=100.0 * np.eye(2))
    tr = simulate_linearized(params, CS, FEATURE, 10, 20, 2)
    assert z_full_conditional(tr, params, FEATURE) > 0.999


@pytest.mark.parametrize("p_cs", [0.5, 0.2])
def test_z_log_odds_brute_force(p_cs):
    params = default_params()
    tr = simulate_linearized(params, SB, FEATURE, 60, 50, 4)
    brute = (log_path_likelihood(tr, params, CS, FEATURE) - log_path_likelihood(tr, params, SB, FEATURE)
             + math.log(p_cs / (1 - p_cs)))
    assert z_log_odds(tr, params, FEATURE, p_cs) == pytest.approx(brute, abs=1e-10)


def test_label_swap_symmetry():
    params, tracks, labels = small_population()
    data = PathData(imputations_from_tracks(tracks), FEATURE)
    state = ChainState.from_params(params, [labels[i] for i in data.ids])
    pr = PriorConfig()
    lp = log_posterior(data, state, pr)
    assert math.isfinite(lp)
    assert log_posterior(data, state.swapped(), pr) == pytest.approx(lp, abs=1e-10)


def test_zero_iterations_returns_initialisation():
    _, tracks, _ = small_population()
    data = PathData(imputations_from_tracks(tracks), FEATURE)
    chain = Chain(data, PriorConfig(), MCMCConfig(0, 0), seed=5)
    s = chain.run().samples()
    assert len(s) == 0 and chain.it == 0
    init = initialize(data, PriorConfig(), 5)
    assert s.init.sigma2 == init.sigma2 and np.array_equal(s.init.z, init.z)
    assert np.array_equal(s.init.cen, init.cen)


def test_initialize_recovers_separated_clusters():
    params, tracks, labels = small_population(n=12, separation=2000.0)
    data = PathData(imputations_from_tracks(tracks), FEATURE)
    pr = PriorConfig()
    init = initialize(data, pr, 1)
    assert [int(v) for v in init.z] == [labels[i] for i in data.ids]
    assert init.cen[CS, 0] < init.cen[SB, 0]
    assert init.tau2 == pytest.approx(pr.tau2_mean) and init.a == 135.0 and init.b == 319.0
    again = initialize(data, pr, 1)
    assert np.array_equal(again.cen, init.cen) and again.sigma2 == init.sigma2


def test_initialize_single_cluster_centres_inside():
    cov = 1e4 * np.eye(2)
    params = ModelParams(100.0, 8600.0, Season(69, 337), (0.0, 0.0), (0.0, 0.0), cov, cov)
    tracks = [simulate_linearized(params, CS, FEATURE, 0, 30, s, f"i{s}") for s in range(8)]
    data = PathData(imputations_from_tracks(tracks), FEATURE)
    init = initialize(data, PriorConfig(), 2)
    lo, hi = data.mean_positions.min(0), data.mean_positions.max(0)
    assert np.all(init.cen >= lo - 1.0) and np.all(init.cen <= hi + 1.0)


def test_init_failure_names_component():
    params, tracks, labels = small_population()
    data = PathData(imputations_from_tracks(tracks), FEATURE)
    bad = ChainState.from_params(params, [labels[i] for i in data.ids])
    bad.a, bad.b = 300.0, 200.0
    with pytest.raises(NumericalError, match="season"):
        Chain(data, PriorConfig(), MCMCConfig(10, 0), 1, init=bad)
    bad = ChainState.from_params(params, [labels[i] for i in data.ids])
    bad.spec[SB] = [5.0, 6.0, 0.1]
    with pytest.raises(NumericalError, match="cov_sb"):
        Chain(data, PriorConfig(), MCMCConfig(10, 0), 1, init=bad)


def test_config_validation():
    with pytest.raises(ParameterError):
        MCMCConfig(10, 20)
    with pytest.raises(ParameterError):
        MCMCConfig(fixed=frozenset({"nope"}))
    with pytest.raises(ParameterError):
        PriorConfig(p_cs=1.0)
    with pytest.raises(DataError):
        PathData([], FEATURE)


def test_chain_deterministic_and_resumable(tmp_path):
    _, tracks, _ = small_population()
    data = PathData(imputations_from_tracks(tracks), FEATURE)
    cfg = MCMCConfig(60, 20)
    full = Chain(data, PriorConfig(), cfg, seed=8).run().samples()
    again = mcmc_fit(data, None, PriorConfig(), cfg, seed=8)
    assert np.array_equal(full.sigma2, again.sigma2) and np.array_equal(full.z, again.z)
    assert len(full) == 40 and full.iters[0] == 21
    part = Chain(data, PriorConfig(), cfg, seed=8).run(until=25)
    part.save(tmp_path / "ck.pkl")
    resumed = Chain.restore(tmp_path / "ck.pkl", data).run().samples()
    for name in ("sigma2", "tau2", "a", "b", "cen", "spec", "z"):
        assert np.array_equal(getattr(full, name), getattr(resumed, name)), name
    other = mcmc_fit(data, None, PriorConfig(), cfg, seed=9)
    assert not np.array_equal(full.sigma2, other.sigma2)


def test_multiple_imputations_are_visited():
    params, tracks, _ = small_population(n=4, days=20)
    rng = np.random.default_rng(0)
    sets = [ImputationSet(t.id, 3, [ImputedSegment(t.t0, t.positions[None] + rng.normal(0, 2, (3, 20, 2)))])
            for t in tracks]
    data = PathData(sets, FEATURE)
    chain = Chain(data, PriorConfig(), MCMCConfig(30, 0), seed=1)
    seen = set()
    for _ in range(30):
        chain.iterate()
        seen.update(chain.state.k.tolist())
        assert np.allclose(chain.ll, np.array(chain._eval(chain.state)))
    assert seen == {0, 1, 2}


def test_detailed_balance_single_label():
    cov = np.diag([400.0, 300.0])
    params = ModelParams(100.0, 900.0, Season(69, 337), (-10.0, 0.0), (10.0, 5.0), cov, cov * 1.3)
    tr = Track("only", 200, [[0.0, 0.0], [4.0, -3.0], [9.0, 1.0]])
    p = z_full_conditional(tr, params, FEATURE)
    assert 0.05 < p < 0.95
    data = PathData(imputations_from_tracks([tr]), FEATURE)
    init = ChainState.from_params(params, [CS])
    fixed = frozenset({"imputation", "sigma2", "tau2", "a", "b", "center", "cov"})
    n = 100_000
    s = mcmc_fit(data, None, PriorConfig(), MCMCConfig(n, 0, fixed=fixed), seed=2, init=init)
    freq = s.z[:, 0].mean()
    assert abs(freq - p) < 4 * math.sqrt(p * (1 - p) / n)


@pytest.mark.slow
def test_prior_recovery_without_likelihood():
    pr = PriorConfig()
    init = ChainState.from_params(default_params(), [CS, SB])
    thin = 40  # lag-40 autocorrelation is negligible for every block
    cfg = MCMCConfig(5000 + thin * 10_000, 5000, thin, use_likelihood=False,
                     fixed=frozenset({"imputation"}))
    s = Chain(None, pr, cfg, 4, init=init).run().samples()
    assert len(s) == 10_000
    crit = stats.kstwo(len(s)).ppf(0.99)
    refs = {"sigma2": stats.invgamma(pr.sigma2_shape, scale=pr.sigma2_scale),
            "tau2": stats.invgamma(pr.tau2_shape, scale=pr.tau2_scale),
            "a": stats.norm(pr.a_mean, pr.a_sd), "b": stats.norm(pr.b_mean, pr.b_sd)}
    for name, ref in refs.items():
        d = stats.kstest(getattr(s, name), ref.cdf).statistic
        assert d < crit, (name, d, crit)


@pytest.mark.slow
def test_sigma2_without_season_matches_step_variance():
    cov = 1e6 * np.eye(2)
    params = ModelParams(272.0, 8600.0, Season(69, 337), (-1.0, 0.0), (1.0, 0.0), cov, cov)
    tracks = [simulate_linearized(params, i % 2, FEATURE, 0, 200, 100 + i, f"i{i:02d}")
              for i in range(50)]
    # no integer day lies strictly inside (0.2, 0.8): the feature never acts
    init = ChainState.from_params(params.replace(season=Season(0.2, 0.8)), [i % 2 for i in range(50)])
    data = PathData(imputations_from_tracks(tracks), FEATURE)
    s = mcmc_fit(data, None, PriorConfig(a_mean=0.5, a_sd=0.1, b_mean=0.6, b_sd=0.1),
                 MCMCConfig(3000, 1000, fixed=frozenset({"a", "b"})), seed=1, init=init)
    steps = np.concatenate([np.diff(t.positions, axis=0) for t in tracks])
    empirical = float(np.mean(np.sum(steps ** 2, axis=1)) / 2.0)
    assert abs(np.median(s.sigma2) / empirical - 1.0) < 0.10


def test_chain_csv_roundtrip(tmp_path):
    _, tracks, _ = small_population(n=3, days=15)
    data = PathData(imputations_from_tracks(tracks), FEATURE)
    s = mcmc_fit(data, None, PriorConfig(), MCMCConfig(12, 2), seed=3)
    p = tmp_path / "chain.csv"
    write_chain(s, p)
    head = p.read_text().splitlines()[0].split(",")
    assert head[:9] == ["iter", "sigma_mu2", "tau2", "a", "b", "cx_cs", "cy_cs", "cx_sb", "cy_sb"]
    assert head[-3:] == ["z_1", "z_2", "z_3"] and head == chain_header(3)
    back = read_chain(p, data.ids)
    for name in ("iters", "sigma2", "tau2", "a", "b", "cen", "spec", "z"):
        assert np.array_equal(getattr(back, name), getattr(s, name)), name


def test_summary_percentiles(tmp_path):
    rng = np.random.default_rng(0)
    n = 1001
    s = PosteriorSamples(["x"], np.arange(n), rng.gamma(5, 50, n), rng.gamma(5, 2000, n),
                         rng.normal(135, 5, n), rng.normal(319, 5, n), np.zeros((n, 2, 2)),
                         np.zeros((n, 2, 3)), np.zeros((n, 1), dtype=np.int8),
                         ChainState.from_params(default_params(), [CS]))
    half = [PosteriorSamples.concat([s])]
    rows = {r["parameter"]: r for r in summarize(half)}
    assert rows["a"]["median"] == pytest.approx(np.median(s.a))
    assert rows["sigma_mu"]["upper_97.5"] == pytest.approx(np.percentile(np.sqrt(s.sigma2), 97.5))
    write_summary(summarize(half), tmp_path / "s.csv")
    lines = (tmp_path / "s.csv").read_text().splitlines()
    assert lines[0] == "parameter,median,lower_2.5,upper_97.5" and lines[1].startswith("sigma_mu2,")
