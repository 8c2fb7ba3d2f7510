"""Command-line entry point: ``featurestep <command> [--config FILE] [--key value ...]``.

Outputs go under ``output_dir`` in a fixed layout: ``tracks/``,
``imputations/``, ``posterior/``, ``boundary/`` and ``reports/``. Every
command also writes ``effective-config.<command>.txt``, which reloads to the
same configuration.
"""
from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError, FeatureStepError
from .geometry import DynamicFeature, dump_features, load_features

log = logging.getLogger("featurestep")

COMMANDS = ("simulate", "impute", "fit", "boundary", "validate-linearization", "bench")


def _feature(cfg, days=None) -> DynamicFeature:
    from .scenarios import ice_edge_feature

    if cfg["feature"] == "ice_edge":
        return ice_edge_feature(days if days is not None else range(365))
    return load_features(cfg.path("feature"))


def _outdir(cfg, sub: str) -> Path:
    d = cfg.output_dir / sub
    d.mkdir(parents=True, exist_ok=True)
    return d


def _write_rows(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


# ---------------------------------------------------------------------------

def cmd_simulate(cfg) -> None:
    from .impute import thin_to_observations, write_observations
    from .movement import write_tracks
    from .scenarios import default_params, population_design, simulate_population
    from .seeding import substream

    n, T, seed = cfg["n_individuals"], cfg["n_days"], cfg.seed
    if n < 0 or T < 1:
        raise ConfigError("need n_individuals >= 0 and n_days >= 1")
    params = default_params(cfg["sigma2"], cfg["tau2"], cfg["a"], cfg["b"], cfg["separation"])
    design = population_design(n, T)
    last = max((t0 + T for _, _, t0 in design), default=T)
    feature = _feature(cfg, range(last))
    tracks, labels = simulate_population(params, feature, n, T, seed,
                                         exact=cfg["simulator"] == "exact")
    out = _outdir(cfg, "tracks")
    write_tracks(tracks, out / "tracks.csv")
    _write_rows(out / "labels.csv", ["id", "z"], [[tid, z] for tid, z in labels.items()])
    truth = [("sigma2", params.sigma2), ("tau2", params.tau2), ("a", params.season.a),
             ("b", params.season.b), ("center_cs", tuple(params.center_cs)),
             ("center_sb", tuple(params.center_sb)), ("cov_cs", tuple(params.cov_cs.ravel())),
             ("cov_sb", tuple(params.cov_sb.ravel()))]
    (out / "truth.txt").write_text("".join(
        f"{k} = {','.join(repr(float(x)) for x in np.atleast_1d(v))}\n" for k, v in truth))
    dump_features(feature, out / "features.geojson")
    if cfg["observe"]:
        dev = cfg.device_sd()
        if cfg["device_class"] not in dev:
            raise ConfigError(f"device_class {cfg['device_class']!r} has no device_sd entry")
        obs = thin_to_observations(tracks, substream(seed, "observe"), cfg["gaps"],
                                   cfg["device_class"], dev)
        write_observations(obs, out / "observations.csv")
    log.info("simulated %d tracks of %d days", n, T)


def cmd_impute(cfg) -> None:
    from .impute import group_by_id, impute_population, read_observations, write_imputations

    if cfg["observations"] is None:
        cfg["observations"] = str(cfg.output_dir / "tracks" / "observations.csv")
    obs = read_observations(cfg.path("observations"), cfg.device_sd())
    if not obs:
        raise DataError(f"{cfg['observations']}: no observations")
    if cfg["K"] < 1:
        raise ConfigError("K must be at least 1")
    sets, qs = impute_population(group_by_id(obs), cfg["K"], cfg.seed, cfg["q_method"],
                                 cfg["q"], cfg["max_gap"])
    out = _outdir(cfg, "imputations")
    write_imputations(sets, out / "imputations.csv")
    rows = []
    for s in sets:
        q = np.broadcast_to(np.asarray(qs[s.id], dtype=float), (s.K,))
        rows.extend([s.id, k, f"{q[k]:.6f}"] for k in range(s.K))
    _write_rows(out / "q.csv", ["id", "k", "q"], rows)
    log.info("imputed %d individuals, K = %d", len(sets), cfg["K"])


def _fit_inputs(cfg):
    from .impute import read_imputations
    from .inference import imputations_from_tracks
    from .movement import read_tracks

    if cfg["imputations"] is None and cfg["tracks"] is None:
        default = cfg.output_dir / "imputations" / "imputations.csv"
        if default.exists():
            cfg["imputations"] = str(default)
        else:
            cfg["tracks"] = str(cfg.output_dir / "tracks" / "tracks.csv")
    if cfg["imputations"] is not None:
        sets = read_imputations(cfg.path("imputations"))
    else:
        sets = imputations_from_tracks(read_tracks(cfg.path("tracks")))
    if not sets:
        raise DataError("no individuals to fit")
    sets.sort(key=lambda s: s.id)
    last = max(seg.t0 + seg.paths.shape[1] for s in sets for seg in s.segments)
    return sets, _feature(cfg, range(last))


def cmd_fit(cfg) -> None:
    from .inference import Chain, PathData, summarize, write_chain, write_summary

    sets, feature = _fit_inputs(cfg)
    data = PathData(sets, feature)
    priors, mcmc = cfg.priors(), cfg.mcmc()
    if cfg["chains"] < 1:
        raise ConfigError("chains must be at least 1")
    out = _outdir(cfg, "posterior")
    _write_rows(out / "ids.csv", ["index", "id"], [[i + 1, tid] for i, tid in enumerate(data.ids)])
    samples = []
    for c in range(cfg["chains"]):
        ckpt = out / f"checkpoint_{c}.pkl"
        if cfg["resume"] and ckpt.exists():
            chain = Chain.restore(ckpt, data)
            log.info("chain %d resumed at iteration %d", c, chain.it)
        else:
            chain = Chain(data, priors, mcmc, cfg.seed, c)
        chain.run(checkpoint=ckpt, checkpoint_every=cfg["checkpoint_every"])
        chain.save(ckpt)
        s = chain.samples()
        write_chain(s, out / f"chain_{c}.csv")
        samples.append(s)
        log.info("chain %d done: acceptance %s", c, s.acceptance)
    write_summary(summarize(samples), out / "summary.csv")


def _read_posterior(cfg):
    from .inference import PosteriorSamples, read_chain
    from .movement import read_csv_rows

    if cfg["posterior_dir"] is None:
        cfg["posterior_dir"] = str(cfg.output_dir / "posterior")
    d = cfg.path("posterior_dir")
    ids = [row[1] for _, row in read_csv_rows(d / "ids.csv", ["index", "id"])]
    files = sorted(d.glob("chain_*.csv"))
    if not files:
        raise DataError(f"{d}: no chain_*.csv files")
    return PosteriorSamples.concat([read_chain(f, ids) for f in files])


def cmd_boundary(cfg) -> None:
    from .boundary import summarize_boundary, write_boundary_csv, write_boundary_geojson

    post = _read_posterior(cfg)
    if len(post) == 0:
        raise DataError("posterior has no draws")
    window = cfg["window"]
    if window is not None and len(window) != 4:
        raise ConfigError("window must be xmin,ymin,xmax,ymax")
    summary = summarize_boundary(post, window, cfg["step"])
    out = _outdir(cfg, "boundary")
    write_boundary_geojson(summary, out / "boundary.geojson")
    write_boundary_csv(summary, out / "offsets.csv")
    (out / "report.txt").write_text(
        f"draws = {summary.n_draws}\nvertices = {len(summary.vertices)}\n"
        f"excluded_total = {int(summary.excluded.sum())}\n"
        f"excluded_max_per_vertex = {int(summary.excluded.max(initial=0))}\n")


def cmd_validate(cfg) -> None:
    from .oracle import VALIDATION_HEADER, validate_linearization

    radii = cfg["radii"]
    if not radii:
        raise ConfigError("radii is empty")
    rows = validate_linearization(radii, cfg["val_sigma"], cfg["val_tau"], cfg["val_offset"],
                                  cfg["grid_n"])
    fmt = {"scenario": str, "curvature": "{:.6g}".format, "sigma_mu": "{:.6g}".format,
           "tau": "{:.6g}".format, "tv": "{:.6e}".format,
           "runtime_exact": "{:.6f}".format, "runtime_linearized": "{:.6f}".format}
    _write_rows(_outdir(cfg, "reports") / "validation.csv", VALIDATION_HEADER,
                [[fmt[k](r[k]) for k in VALIDATION_HEADER] for r in rows])


def cmd_bench(cfg) -> None:
    from .oracle import BENCH_HEADER, benchmark

    if cfg["bench_repeats"] < 1:
        raise ConfigError("bench_repeats must be at least 1")
    res = benchmark(cfg["bench_repeats"], cfg["grid_n"])
    rows = [["quadrature_normalizer", f"{res['quadrature_normalizer']:.6e}", res["repeats"]],
            ["linearized_step_density", f"{res['linearized_step_density']:.6e}", res["repeats"]],
            ["speedup", f"{res['speedup']:.3f}", res["repeats"]]]
    _write_rows(_outdir(cfg, "reports") / "bench.csv", BENCH_HEADER, rows)
    print(f"speedup {res['speedup']:.1f}x (quadrature {res['quadrature_normalizer']:.4f} s, "
          f"linearized {res['linearized_step_density'] * 1e6:.1f} us)")


HANDLERS = {"simulate": cmd_simulate, "impute": cmd_impute, "fit": cmd_fit,
            "boundary": cmd_boundary, "validate-linearization": cmd_validate, "bench": cmd_bench}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="featurestep",
        description="Step-selection movement models with a dynamic feature.",
        epilog="Any config key can be overridden with --key value.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", help="key = value config file")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def run(argv=None) -> int:
    from .config import RunConfig, apply_overrides, load_config

    parser = build_parser()
    args, rest = parser.parse_known_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    cfg = load_config(args.config) if args.config else RunConfig()
    apply_overrides(cfg, rest)
    cfg.seed  # fail early without a seed
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    HANDLERS[args.command](cfg)
    cfg.dump(cfg.output_dir / f"effective-config.{args.command}.txt")
    return 0


def main(argv=None) -> int:
    try:
        return run(argv)
    except FeatureStepError as exc:
        print(f"featurestep: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"featurestep: error: {exc}", file=sys.stderr)
        return DataError.exit_code


if __name__ == "__main__":
    sys.exit(main())
