import filecmp
from pathlib import Path

import pytest

from featurestep.cli import main
from featurestep.config import RunConfig, apply_overrides, load_config, parse_text
from featurestep.errors import ConfigError

SMALL = ["--n_individuals", "4", "--n_days", "30"]
FAST_FIT = ["--iterations", "40", "--burn_in", "10", "--chains", "2", "--checkpoint_every", "15"]


def run(tmp_path, *args, out="out"):
    return main([*args, "--seed", "7", "--output_dir", str(tmp_path / out)])


def test_config_parsing_and_roundtrip(tmp_path):
    cfg = parse_text("seed = 3\n# comment\niterations = 50  # trailing\nradii = 100, 200\n"
                     "prior.a_mean = 140\ndevice_sd.argos_c = 45\nobserve = no\n")
    assert cfg.seed == 3 and cfg["iterations"] == 50 and cfg["radii"] == (100.0, 200.0)
    assert cfg.priors().a_mean == 140.0 and cfg.device_sd()["argos_c"] == 45.0
    assert cfg["observe"] is False and cfg["K"] == 30
    cfg.dump(tmp_path / "eff.txt")
    assert load_config(tmp_path / "eff.txt") == cfg


def test_config_errors(tmp_path):
    with pytest.raises(ConfigError, match="line 1"):
        parse_text("iterations: 5")
    with pytest.raises(ConfigError, match="unknown config key"):
        parse_text("colour = blue")
    with pytest.raises(ConfigError, match="bad value"):
        parse_text("iterations = many")
    with pytest.raises(ConfigError, match="seed"):
        RunConfig().seed
    with pytest.raises(ConfigError):
        load_config(tmp_path / "absent.txt")
    cfg = apply_overrides(RunConfig(), ["--burn-in", "3", "--thin=2"])
    assert cfg["burn_in"] == 3 and cfg["thin"] == 2
    with pytest.raises(ConfigError, match="missing value"):
        apply_overrides(RunConfig(), ["--thin"])
    with pytest.raises(ConfigError):
        RunConfig({"q_method": "guess"})


def test_missing_seed_is_a_config_error(tmp_path, capsys):
    assert main(["simulate", "--output_dir", str(tmp_path)]) == 2
    assert "seed" in capsys.readouterr().err


def test_simulate_default_size_and_determinism(tmp_path):
    assert run(tmp_path, "simulate", out="a") == 0
    assert run(tmp_path, "simulate", out="b") == 0
    rows = (tmp_path / "a" / "tracks" / "tracks.csv").read_text().splitlines()
    assert rows[0] == "id,day,x_km,y_km" and len(rows) == 1 + 20 * 200
    for name in ("tracks.csv", "labels.csv", "truth.txt", "observations.csv", "features.geojson"):
        assert filecmp.cmp(tmp_path / "a" / "tracks" / name, tmp_path / "b" / "tracks" / name,
                           shallow=False), name
    truth = (tmp_path / "a" / "tracks" / "truth.txt").read_text()
    assert "sigma2 = 272.0" in truth and "tau2 = 8600.0" in truth


def test_simulate_zero_individuals(tmp_path):
    assert run(tmp_path, "simulate", "--n_individuals", "0") == 0
    assert (tmp_path / "out" / "tracks" / "tracks.csv").read_text() == "id,day,x_km,y_km\n"


def test_pipeline_end_to_end(tmp_path):
    assert run(tmp_path, "simulate", *SMALL) == 0
    assert run(tmp_path, "impute", "--K", "3") == 0
    assert run(tmp_path, "fit", *FAST_FIT) == 0
    out = tmp_path / "out"
    summary = (out / "posterior" / "summary.csv").read_text().splitlines()
    assert summary[0] == "parameter,median,lower_2.5,upper_97.5"
    assert [r.split(",")[0] for r in summary[1:]] == ["sigma_mu2", "tau2", "sigma_mu", "tau", "a", "b"]
    assert run(tmp_path, "boundary", "--step", "20") == 0
    assert (out / "boundary" / "boundary.geojson").exists()
    assert "draws = 60" in (out / "boundary" / "report.txt").read_text()
    for cmd in ("simulate", "impute", "fit", "boundary"):
        eff = out / f"effective-config.{cmd}.txt"
        assert load_config(eff)["seed"] == 7

    # re-running from the emitted configuration reproduces the chains byte for byte
    first = (out / "posterior" / "chain_0.csv").read_bytes()
    assert main(["fit", "--config", str(out / "effective-config.fit.txt")]) == 0
    assert (out / "posterior" / "chain_0.csv").read_bytes() == first


def test_fit_resume_is_bit_identical(tmp_path):
    from featurestep.cli import _fit_inputs
    from featurestep.inference import Chain, PathData

    assert run(tmp_path, "simulate", *SMALL) == 0
    tracks = str(tmp_path / "out" / "tracks" / "tracks.csv")
    assert run(tmp_path, "fit", *FAST_FIT, "--tracks", tracks) == 0
    full = [(tmp_path / "out" / "posterior" / f"chain_{c}.csv").read_bytes() for c in (0, 1)]

    # leave a checkpoint part-way through chain 1, as an interrupted run would
    cfg = load_config(tmp_path / "out" / "effective-config.fit.txt")
    cfg["output_dir"] = str(tmp_path / "r")
    sets, feature = _fit_inputs(cfg)
    ck = tmp_path / "r" / "posterior"
    ck.mkdir(parents=True)
    Chain(PathData(sets, feature), cfg.priors(), cfg.mcmc(), 7, 1).run(until=15).save(
        ck / "checkpoint_1.pkl")
    assert main(["fit", "--config", str(tmp_path / "out" / "effective-config.fit.txt"),
                 "--output_dir", str(tmp_path / "r"), "--resume", "true"]) == 0
    assert [(ck / f"chain_{c}.csv").read_bytes() for c in (0, 1)] == full


def test_malformed_csv_names_line(tmp_path, capsys):
    bad = tmp_path / "tracks.csv"
    bad.write_text("id,day,x_km,y_km\na,0,1,2\na,1,oops,2\n")
    code = run(tmp_path, "fit", "--tracks", str(bad), "--iterations", "2", "--burn_in", "0")
    assert code == 3
    assert "line 3" in capsys.readouterr().err


def test_empty_inputs_fail_cleanly(tmp_path, capsys):
    obs = tmp_path / "obs.csv"
    obs.write_text("id,t_star,x_km,y_km,device_class\n")
    assert run(tmp_path, "impute", "--observations", str(obs)) == 3
    assert "no observations" in capsys.readouterr().err
    tracks = tmp_path / "t.csv"
    tracks.write_text("id,day,x_km,y_km\n")
    assert run(tmp_path, "fit", "--tracks", str(tracks)) == 3
    assert run(tmp_path, "validate-linearization", "--radii", "") == 2
    assert run(tmp_path, "bench", "--bench_repeats", "0") == 2
    assert run(tmp_path, "impute", "--observations", str(tmp_path / "missing.csv")) == 2


def test_validate_and_bench(tmp_path, capsys):
    assert run(tmp_path, "validate-linearization", "--grid_n", "128", out="a") == 0
    assert run(tmp_path, "validate-linearization", "--grid_n", "128", out="b") == 0
    rows = [r.split(",") for r in (tmp_path / "a" / "reports" / "validation.csv").read_text().splitlines()]
    assert rows[0] == ["scenario", "curvature", "sigma_mu", "tau", "tv", "runtime_exact", "runtime_linearized"]
    other = [r.split(",") for r in (tmp_path / "b" / "reports" / "validation.csv").read_text().splitlines()]
    # everything except the wall-clock columns is reproducible
    assert [r[:5] for r in rows] == [r[:5] for r in other]
    assert run(tmp_path, "bench", "--bench_repeats", "1", "--grid_n", "128") == 0
    assert "speedup" in capsys.readouterr().out
    bench = (tmp_path / "out" / "reports" / "bench.csv").read_text().splitlines()
    assert bench[0] == "method,seconds_per_eval,repeats"
    assert float(bench[3].split(",")[1]) > 1.0
