import math

import numpy as np
import pytest

from featurestep.errors import DataError, ParameterError
from featurestep.impute import (Observation, bootstrap_process_variance, estimate_process_variance,
                                group_by_id, impute_population, increment_variance,
                                process_loglik, read_imputations, read_observations,
                                smooth_and_impute, smoother_moments, split_segments,
                                thin_to_observations, write_imputations, write_observations)
from featurestep.movement import Track


def obs_list(times, locs, sd=1.0, tid="a"):
    return [Observation(tid, float(t), loc, "argos_a", sd) for t, loc in zip(times, locs)]


def brownian(q, times, rng):
    times = np.asarray(times, dtype=float)
    steps = rng.standard_normal((len(times), 2)) * np.sqrt(q * np.diff(times, prepend=times[0]))[:, None]
    return np.cumsum(steps, axis=0)


def test_noiseless_integer_days_interpolate_exactly(rng):
    locs = rng.normal(0, 20, (6, 2))
    obs = obs_list(range(10, 16), locs, sd=1e-6)
    imp = smooth_and_impute(obs, K=5, q=50.0, seed=1)
    paths = imp.segments[0].paths
    assert imp.segments[0].t0 == 10 and paths.shape == (5, 6, 2)
    assert np.all(np.abs(paths - locs[None]) < 0.01)
    assert np.all(np.abs(paths - paths[:1]) < 0.01)


@pytest.mark.parametrize("r0,r2", [(0.0, 0.0), (3.0, 3.0), (1.0, 5.0)])
def test_bridge_midpoint(r0, r2):
    q = 40.0
    obs = [Observation("a", 0.0, (0.0, 0.0), "x", max(r0, 1e-9)),
           Observation("a", 2.0, (10.0, -4.0), "x", max(r2, 1e-9))]
    (t0, mean, var), = smoother_moments(obs, q)
    assert t0 == 0 and mean.shape == (3, 2)
    v0, v2 = q + r0 ** 2, q + r2 ** 2
    expected_var = 1.0 / (1.0 / v0 + 1.0 / v2)
    expected_mean = (np.array([0.0, 0.0]) / v0 + np.array([10.0, -4.0]) / v2) * expected_var
    assert var[1] == pytest.approx(expected_var, rel=1e-9)
    assert np.allclose(mean[1], expected_mean, atol=1e-9)
    if r0 == r2:
        assert np.allclose(mean[1], (5.0, -2.0))
    if r0 == 0.0:
        assert var[1] == pytest.approx(q / 2)


def test_k30_sample_variance_matches_smoother(rng):
    times = [0.0, 3.5, 7.2, 10.0]
    obs = obs_list(times, brownian(100.0, times, rng), sd=5.0)
    q = 100.0
    (t0, mean, var), = smoother_moments(obs, q)
    day = 5 - t0
    imp = smooth_and_impute(obs, K=30, q=q, seed=4)
    x = imp.segments[0].paths[:, day, :]
    sample_var = np.mean((x - x.mean(0)) ** 2) * 30 / 29
    assert abs(sample_var / var[day] - 1.0) < 0.25


def test_draws_centred_on_smoothing_mean(rng):
    times = np.sort(rng.uniform(0, 30, 12))
    obs = obs_list(times, brownian(60.0, times, rng), sd=8.0)
    (t0, mean, var), = smoother_moments(obs, 60.0)
    imp = smooth_and_impute(obs, K=1000, q=60.0, seed=2)
    paths = imp.segments[0].paths
    resid = paths.mean(0) - mean
    se = np.sqrt(var / 1000)[:, None]
    assert np.all(np.abs(resid) < 4 * se)


def test_paths_converge_to_fixes_as_noise_vanishes(rng):
    locs = rng.normal(0, 10, (4, 2))
    gaps = []
    for sd in (1.0, 0.1, 0.001):
        imp = smooth_and_impute(obs_list([0, 2, 4, 6], locs, sd), K=20, q=30.0, seed=0)
        gaps.append(np.max(np.abs(imp.segments[0].paths[:, ::2] - locs)))
    assert gaps[0] > gaps[1] > gaps[2] and gaps[2] < 0.01


def test_determinism_and_seed_dependence(rng):
    obs = obs_list([0.3, 2.0, 4.9], rng.normal(size=(3, 2)))
    a = smooth_and_impute(obs, 4, 10.0, seed=3)
    b = smooth_and_impute(obs, 4, 10.0, seed=3)
    c = smooth_and_impute(obs, 4, 10.0, seed=4)
    assert np.array_equal(a.segments[0].paths, b.segments[0].paths)
    assert not np.array_equal(a.segments[0].paths, c.segments[0].paths)
    # fractional fix times span only the whole days between them
    assert list(a.segments[0].days) == [1, 2, 3, 4]


def test_single_observation_cannot_smooth():
    with pytest.raises(DataError, match="cannot smooth"):
        smooth_and_impute(obs_list([1.0], [(0, 0)]), 3, 1.0)
    with pytest.raises(DataError, match="cannot smooth"):
        estimate_process_variance(obs_list([1.0], [(0, 0)]))


def test_long_gap_splits_segments():
    obs = obs_list([0, 2, 4, 30, 33], np.zeros((5, 2)))
    assert [len(s) for s in split_segments(obs)] == [3, 2]
    assert len(split_segments(obs, max_gap=30)) == 1
    imp = smooth_and_impute(obs, 2, 5.0, seed=0)
    assert [(s.t0, s.paths.shape[1]) for s in imp.segments] == [(0, 5), (30, 4)]
    assert imp.n_days == 9 and len(imp.draw(1)) == 2


def test_static_truth_gives_q_near_zero(rng):
    locs = rng.normal(0, 5.0, (200, 2))
    q = estimate_process_variance(obs_list(np.arange(200) * 0.5, locs, sd=5.0))
    assert q < 0.05


def test_brownian_q_recovered(rng):
    times = np.cumsum(rng.uniform(0.2, 1.0, 500))
    obs = obs_list(times, brownian(100.0, times, rng) + rng.normal(0, 3, (500, 2)), sd=3.0)
    q = estimate_process_variance(obs)
    assert 50.0 < q < 200.0
    # interior optimum: the log-likelihood is flat there
    h = 1e-3
    grad = (process_loglik(obs, q * math.exp(h)) - process_loglik(obs, q * math.exp(-h))) / (2 * h)
    assert abs(grad) < 0.05
    assert process_loglik(obs, q) > process_loglik(obs, 0.8 * q)
    assert process_loglik(obs, q) > process_loglik(obs, 1.25 * q)


def test_population_q_estimators(rng):
    groups = {}
    for i in range(10):
        times = np.arange(0, 120, 3.0)
        groups[f"i{i}"] = obs_list(times, brownian(200.0, times, rng) + rng.normal(0, 4, (40, 2)),
                                   sd=4.0, tid=f"i{i}")
    q = increment_variance(groups.values())
    assert 160.0 < q < 250.0
    boot = bootstrap_process_variance(groups, 25, seed=9)
    assert boot.shape == (25,) and np.array_equal(boot, bootstrap_process_variance(groups, 25, 9))
    assert 0.5 * q < np.median(boot) < 2 * q and boot.std() > 0
    sets, qs = impute_population(groups, 5, seed=1)
    assert [s.id for s in sets] == sorted(groups)
    assert np.array_equal(qs["i0"], bootstrap_process_variance(groups, 5, 1))
    sets2, qs2 = impute_population(groups, 5, seed=1, q=50.0)
    assert qs2["i3"] == 50.0
    with pytest.raises(ParameterError):
        impute_population(groups, 5, 1, q_method="magic")


def test_imputation_csv_roundtrip(tmp_path, rng):
    obs = obs_list([0, 2, 4, 30, 33], rng.normal(size=(5, 2)))
    sets = [smooth_and_impute(obs, 3, 5.0, seed=0)]
    p = tmp_path / "imp.csv"
    write_imputations(sets, p)
    assert p.read_text().splitlines()[0] == "id,k,day,x_km,y_km"
    back, = read_imputations(p)
    assert back.K == 3 and [s.t0 for s in back.segments] == [0, 30]
    assert np.allclose(back.segments[1].paths, sets[0].segments[1].paths, atol=1e-6)


def test_observation_csv(tmp_path, rng):
    obs = obs_list([0.25, 1.5], rng.normal(size=(2, 2)), sd=15.0, tid="z9")
    p = tmp_path / "obs.csv"
    write_observations(obs, p)
    back = read_observations(p)
    assert back[0].sd == 15.0 and back[1].t_star == 1.5 and group_by_id(back).keys() == {"z9"}
    p.write_text("id,t_star,x_km,y_km,device_class\nz,0,1,2,sonar\n")
    with pytest.raises(DataError, match="line 2.*sonar"):
        read_observations(p)
    with pytest.raises(ParameterError):
        Observation("a", 0.0, (0, 0), "gps", 0.0)


def test_thinning_keeps_track_ends(rng):
    tr = Track("b", 100, rng.normal(size=(30, 2)))
    obs = thin_to_observations([tr], rng, gaps=(2, 3, 4), device_class="gps")
    days = [o.t_star for o in obs]
    assert days[0] == 100 and days[-1] == 129
    assert all(1 <= d <= 4 for d in np.diff(days))
    assert all(o.sd == 0.05 for o in obs)
