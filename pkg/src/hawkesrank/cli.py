"""``hawkesrank`` command-line interface.

Every run writes ``manifest.json`` into its output directory; passing that
file back through ``--config`` repeats the run.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .baselines import GlickoConfig, IsiConfig, aggregate_rank_fit, glicko_scores, isi_rank, spearman
from .data_io import DataError, parse_events, winloss_matrix, write_events, write_triples
from .evalpred import (
    ExplosiveDrawError,
    glicko_forecast,
    ks_matrix,
    observed_counts,
    outdegree_rank,
    pair_rescaled_times,
    pearson_residuals,
    poisson_forecast,
    posterior_predict,
    prediction_mae,
)
from .inference import (
    FitConfig,
    FitError,
    SampleConfig,
    SamplerError,
    decode_states,
    draws_from_params,
    map_fit,
    params_from_dict,
    params_to_dict,
    read_draws,
    sample_posterior,
    write_draws,
)
from .models import ChpParams, CmmhpParams, DchpParams, EtaParams, PoissonParams, simulate_network
from .pointproc import UnstableProcessError

log = logging.getLogger("hawkesrank")

EXIT_OK, EXIT_NUMERIC, EXIT_USAGE = 0, 1, 2
FIT_MODELS = ("chp", "dchp", "cmmhp", "immhp")
SIM_MODELS = ("chp", "dchp", "cmmhp", "poisson")
BASELINES = ("isi", "glicko", "aggregate")

COMMON = {"seed": 0, "out": "out", "threads": None}
DEFAULTS = {
    "simulate": {"model": "cmmhp", "n_sims": 50, "nodes": 10, "days": 21, "day_length": 2.0, "params": None},
    "fit": {"data": None, "model": "cmmhp", "chains": 4, "draws": 1000, "warmup": 1000, "thin": 1,
            "restarts": 3},
    "diagnose": {"data": None, "params": None},
    "predict": {"data": None, "params": None, "split_day": 15, "horizon_day": 21, "n_sims": 1000},
    "rank": {"data": None, "params": None, "horizon_day": None},
    "baseline": {"data": None, "method": "isi", "steps": 20000, "restarts": 8},
}


class UsageError(Exception):
    pass


# ---------------------------------------------------------------- helpers


def default_true_params(tag: str, n: int):
    """Simulation defaults: uniformly spaced ranks from 1 - 0.5/n down to 0.5/n."""
    f = (n - np.arange(n) - 0.5) / n
    eta = EtaParams(1.8, 0.5, 3.0)
    if tag == "cmmhp":
        return CmmhpParams(np.full(n, 0.03), np.full(n, 0.03), 3.0, eta, 2.0, f)
    if tag == "chp":
        return ChpParams(0.06, eta, 2.0, f)
    if tag == "dchp":
        return DchpParams(np.full(n, 0.03), np.full(n, 0.03), eta, 2.0, f)
    if tag == "poisson":
        rates = np.full((n, n), 0.2)
        np.fill_diagonal(rates, 0.0)
        return PoissonParams(rates)
    raise UsageError(f"cannot simulate model {tag!r}")


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _write_json(obj, path: Path) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _read_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise UsageError(f"no such file: {path}") from None
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}: invalid JSON ({exc})") from None


def _load_data(cfg):
    if not cfg.get("data"):
        raise UsageError("--data is required")
    path = Path(cfg["data"])
    if not path.is_file():
        raise UsageError(f"no such data file: {path}")
    return parse_events(path)


def _load_posterior(cfg):
    """Draws from a draws CSV, or a single parameter set from JSON."""
    if not cfg.get("params"):
        raise UsageError("--params is required (a fitted parameter JSON or draws CSV)")
    path = Path(cfg["params"])
    if not path.is_file():
        raise UsageError(f"no such parameter file: {path}")
    if path.suffix == ".json":
        return draws_from_params([params_from_dict(_read_json(path))])
    return read_draws(path)


def _load_config(path) -> tuple[dict, str | None]:
    text = Path(path).read_text() if Path(path).is_file() else None
    if text is None:
        raise UsageError(f"no such config file: {path}")
    if str(path).endswith((".yaml", ".yml")):
        import yaml

        raw = yaml.safe_load(text) or {}
    else:
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as exc:
            raise UsageError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(raw, dict):
        raise UsageError(f"{path}: config must be a mapping")
    if "config" in raw and isinstance(raw["config"], dict):  # a manifest
        return dict(raw["config"]), raw.get("command")
    return raw, raw.pop("command", None)


def _resolve(command: str, args: argparse.Namespace) -> dict:
    cfg = dict(COMMON)
    cfg.update(DEFAULTS[command])
    if args.config:
        loaded, cmd = _load_config(args.config)
        if cmd is not None and cmd != command:
            raise UsageError(f"config was written by '{cmd}', not '{command}'")
        unknown = set(loaded) - set(cfg)
        if unknown:
            raise UsageError(f"unknown config keys for {command}: {sorted(unknown)}")
        cfg.update(loaded)
    for k in cfg:
        v = getattr(args, k, None)
        if v is not None:
            cfg[k] = v
    if cfg["threads"] is None:
        cfg["threads"] = os.cpu_count() or 1
    return cfg


def _manifest(command: str, cfg: dict, out: Path, inputs: dict[str, str]) -> None:
    import numba
    import scipy

    outputs = {p.name: _sha256(p) for p in sorted(out.iterdir()) if p.is_file() and p.name != "manifest.json"}
    _write_json({
        "command": command,
        "config": cfg,
        "inputs": {k: {"path": v, "sha256": _sha256(Path(v))} for k, v in inputs.items() if v},
        "outputs": outputs,
        "versions": {"hawkesrank": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
                     "numba": numba.__version__, "python": sys.version.split()[0]},
    }, out / "manifest.json")


def _write_rows(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for r in rows:
            fh.write(",".join(repr(x) if isinstance(x, float) else str(x) for x in r) + "\n")


# ---------------------------------------------------------------- commands


def cmd_simulate(cfg: dict, out: Path) -> dict:
    tag, n = cfg["model"], int(cfg["nodes"])
    if tag not in SIM_MODELS:
        raise UsageError(f"--model must be one of {SIM_MODELS} for simulate")
    if cfg["params"]:
        p = params_from_dict(_read_json(cfg["params"]))
        n = p.n_nodes
    else:
        p = default_true_params(tag, n)
    days, length = int(cfg["days"]), float(cfg["day_length"])
    if days < 1 or length <= 0 or int(cfg["n_sims"]) < 1:
        raise UsageError("need days >= 1, day_length > 0 and n_sims >= 1")
    bounds = [length * (d + 1) for d in range(days)]
    T = bounds[-1]
    _write_json(params_to_dict(p), out / "true_params.json")
    seeds = np.random.SeedSequence(int(cfg["seed"])).spawn(int(cfg["n_sims"]))
    width = max(3, len(str(cfg["n_sims"])))
    for k, ss in enumerate(seeds, start=1):
        ds, trajs = simulate_network(p, T, ss, day_boundaries=bounds, cohort=f"sim{k:0{width}d}")
        write_events(ds, out / f"sim_{k:0{width}d}.csv")
        if trajs:
            rows = []
            for (i, j), tr in sorted(trajs.items()):
                for a, b, z in tr.segments():
                    rows.append((i, j, float(a), float(b), z))
            _write_rows(out / f"states_{k:0{width}d}.csv", ["sender", "receiver", "start", "end", "active"], rows)
    return {"params": cfg["params"]}


def cmd_fit(cfg: dict, out: Path) -> dict:
    ds = _load_data(cfg)
    tag = cfg["model"]
    if tag not in FIT_MODELS:
        raise UsageError(f"--model must be one of {FIT_MODELS}")
    T = ds.horizon
    seed = int(cfg["seed"])
    res = map_fit(tag, ds, T, FitConfig(restarts=int(cfg["restarts"]), seed=seed), n_nodes=ds.n_nodes)
    _write_json(params_to_dict(res.params), out / "map_params.json")
    summary = {"map_log_posterior": res.log_posterior, "map_converged": res.converged,
               "map_grad_norm": res.grad_norm}
    n_draws = int(cfg["draws"])
    if n_draws > 0:
        sc = SampleConfig(chains=int(cfg["chains"]), warmup=int(cfg["warmup"]), draws=n_draws,
                          thin=int(cfg["thin"]), seed=seed, n_jobs=int(cfg["threads"]))
        draws = sample_posterior(tag, ds, T, sc, n_nodes=ds.n_nodes, init=res.params)
        write_draws(draws, out / "draws.csv")
        summary["acceptance"] = draws.acceptance
        rhat = draws.split_rhat()
        summary["max_split_rhat"] = float(np.nanmax(rhat)) if np.any(np.isfinite(rhat)) else None
    else:
        draws = draws_from_params([res.params])
    if tag != "immhp":
        mean, sd = draws.rank_summary()
        rows = [(i + 1, float(mean[i]), float(sd[i]), float(res.params.f[i])) for i in range(ds.n_nodes)]
        _write_rows(out / "rank_summary.csv", ["node", "f_mean", "f_sd", "f_map"], rows)
    if tag == "cmmhp":
        dec = decode_states(res.params, ds, T)
        rows = []
        for (i, j), d in sorted(dec.pairs.items()):
            for t, z, pa in zip(d.times, d.labels, d.prob_active):
                rows.append((i, j, float(t), int(z), float(pa)))
        _write_rows(out / "states.csv", ["sender", "receiver", "time", "viterbi_active", "p_active"], rows)
        summary["active_fraction"] = dec.active_fraction()
    _write_json(summary, out / "fit_summary.json")
    return {"data": cfg["data"]}


def cmd_diagnose(cfg: dict, out: Path) -> dict:
    ds = _load_data(cfg)
    if not cfg.get("params") or not str(cfg["params"]).endswith(".json"):
        raise UsageError("diagnose needs --params pointing at a fitted parameter JSON")
    p = _load_posterior(cfg).params(0)
    if p.n_nodes != ds.n_nodes:
        raise UsageError(f"parameters cover {p.n_nodes} nodes, data has {ds.n_nodes}")
    T = ds.horizon
    ks = ks_matrix(p, ds, T)
    write_triples(ks.stat, out / "ks_matrix.csv")
    write_triples(ks.sizes.astype(float), out / "ks_sizes.csv")
    res = pearson_residuals(p, ds, T)
    write_triples(res.values, out / "residuals.csv")
    rows = []
    for (i, j), r in sorted(pair_rescaled_times(p, ds, T).items()):
        rows += [(i, j, k + 1, float(v)) for k, v in enumerate(r)]
    _write_rows(out / "rescaled_times.csv", ["sender", "receiver", "index", "value"], rows)
    _write_json({"ks_pass_rate_0.05": ks.pass_rate(0.05), "mean_residual": float(np.mean(res.off_diagonal())),
                 "median_abs_residual": float(np.median(np.abs(res.off_diagonal())))}, out / "diagnose_summary.json")
    return {"data": cfg["data"], "params": cfg["params"]}


def cmd_predict(cfg: dict, out: Path) -> dict:
    ds = _load_data(cfg)
    draws = _load_posterior(cfg)
    s, hmax = int(cfg["split_day"]), int(cfg["horizon_day"])
    if hmax > ds.n_days:
        raise UsageError(f"horizon day {hmax} is beyond the data ({ds.n_days} days)")
    if hmax <= s:
        raise UsageError(f"no prediction window: horizon day {hmax} <= split day {s}")
    horizons = list(range(s + 1, hmax + 1))
    seed = int(cfg["seed"])
    run = posterior_predict(draws, ds, s, horizons, int(cfg["n_sims"]), seed, keep_events=True)
    base = poisson_forecast(ds, s, horizons)
    base_med = poisson_forecast(ds, s, horizons, median=True)
    mae_rows, od_rows, sp_rows = [], [], []
    gcfg = GlickoConfig()
    for d in horizons:
        A = observed_counts(ds, s, d)
        mean, med = run.mean_counts(d), run.median_counts(d)
        write_triples(mean, out / f"pred_mean_day{d}.csv")
        write_triples(med, out / f"pred_median_day{d}.csv")
        mae_rows.append((d, prediction_mae(mean, A), prediction_mae(med, A),
                         prediction_mae(base[d], A), prediction_mae(base_med[d], A)))
        score = run.outdegree(d)
        order = np.lexsort((np.arange(ds.n_nodes), -score))
        rank = np.empty(ds.n_nodes, dtype=int)
        rank[order] = np.arange(1, ds.n_nodes + 1)
        od_rows += [(d, i + 1, float(score[i]), int(rank[i])) for i in range(ds.n_nodes)]
        glicko_now = glicko_scores(ds.truncate_days(d), gcfg).final()[0]
        sp_rows.append((d, spearman(score, glicko_now)))
    _write_rows(out / "mae.csv", ["day", "mae_mean", "mae_median", "poisson_mae_mean", "poisson_mae_median"],
                mae_rows)
    _write_rows(out / "outdegree.csv", ["day", "node", "score", "rank"], od_rows)
    _write_rows(out / "spearman_glicko.csv", ["day", "spearman"], sp_rows)
    bands = glicko_forecast(draws, ds, s, hmax, gcfg, seed, run=run)
    _write_rows(out / "glicko_bands.csv", ["node", "event_index", "mean", "sd"], list(bands.rows()))
    return {"data": cfg["data"], "params": cfg["params"]}


def cmd_rank(cfg: dict, out: Path) -> dict:
    ds = _load_data(cfg)
    draws = _load_posterior(cfg)
    if draws.tag in ("immhp", "poisson", "hawkes"):
        raise UsageError(f"model {draws.tag!r} has no latent ranks")
    d = ds.n_days if cfg["horizon_day"] is None else int(cfg["horizon_day"])
    if not 1 <= d <= ds.n_days:
        raise UsageError(f"horizon day {d} outside 1..{ds.n_days}")
    t = ds.day_end(d)
    mean, sd = draws.rank_summary()
    params = [draws.params(k) for k in range(len(draws))]
    score, _ = outdegree_rank(params, ds, t)
    rf = np.empty(ds.n_nodes, dtype=int)
    rf[np.lexsort((np.arange(ds.n_nodes), -mean))] = np.arange(1, ds.n_nodes + 1)
    ro = np.empty(ds.n_nodes, dtype=int)
    ro[np.lexsort((np.arange(ds.n_nodes), -score))] = np.arange(1, ds.n_nodes + 1)
    rows = [(i + 1, float(mean[i]), float(sd[i]), int(rf[i]), float(score[i]), int(ro[i])) for i in range(ds.n_nodes)]
    _write_rows(out / "ranks.csv", ["node", "f_mean", "f_sd", "f_rank", "outdegree", "outdegree_rank"], rows)
    return {"data": cfg["data"], "params": cfg["params"]}


def cmd_baseline(cfg: dict, out: Path) -> dict:
    ds = _load_data(cfg)
    method = cfg["method"]
    if method not in BASELINES:
        raise UsageError(f"--method must be one of {BASELINES}")
    W = winloss_matrix(ds)
    if method == "isi":
        o = isi_rank(W, IsiConfig(seed=int(cfg["seed"]), steps=int(cfg["steps"]), restarts=int(cfg["restarts"])))
        _write_rows(out / "isi_order.csv", ["position", "node"], [(k + 1, v) for k, v in enumerate(o.order)])
        _write_json({"I": o.inconsistencies, "SI": o.strength}, out / "isi_summary.json")
    elif method == "glicko":
        tr = glicko_scores(ds)
        _write_rows(out / "glicko.csv", ["node", "event_index", "rating", "rd"], list(tr.rows()))
    else:
        fit = aggregate_rank_fit(W, ds.horizon)
        _write_rows(out / "aggregate_ranks.csv", ["node", "f"], [(i + 1, float(v)) for i, v in enumerate(fit.f)])
        _write_json({"intercept": fit.intercept, "slope": fit.slope}, out / "aggregate_summary.json")
    return {"data": cfg["data"]}


COMMANDS = {"simulate": cmd_simulate, "fit": cmd_fit, "diagnose": cmd_diagnose, "predict": cmd_predict,
            "rank": cmd_rank, "baseline": cmd_baseline}


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="hawkesrank", description="Latent-rank point-process models for "
                                 "dominance interaction data.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON/YAML config or a previous run's manifest.json")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", help="output directory")
        p.add_argument("--threads", type=int, help="worker processes (default: available cores)")

    p = sub.add_parser("simulate", help="simulate synthetic cohorts")
    common(p)
    p.add_argument("--model", choices=SIM_MODELS)
    p.add_argument("--n-sims", dest="n_sims", type=int)
    p.add_argument("--nodes", type=int)
    p.add_argument("--days", type=int)
    p.add_argument("--day-length", dest="day_length", type=float)
    p.add_argument("--params", help="true parameter JSON (default: built-in values)")

    p = sub.add_parser("fit", help="MAP fit and posterior sampling")
    common(p)
    p.add_argument("--data")
    p.add_argument("--model", choices=FIT_MODELS)
    p.add_argument("--chains", type=int)
    p.add_argument("--draws", type=int, help="draws per chain (0: MAP only)")
    p.add_argument("--warmup", type=int)
    p.add_argument("--thin", type=int)
    p.add_argument("--restarts", type=int)

    p = sub.add_parser("diagnose", help="K-S and Pearson residual diagnostics")
    common(p)
    p.add_argument("--data")
    p.add_argument("--params")

    p = sub.add_parser("predict", help="posterior-predictive counts past a split day")
    common(p)
    p.add_argument("--data")
    p.add_argument("--params", help="draws CSV or parameter JSON from 'fit'")
    p.add_argument("--split-day", dest="split_day", type=int)
    p.add_argument("--horizon-day", dest="horizon_day", type=int)
    p.add_argument("--n-sims", dest="n_sims", type=int)

    p = sub.add_parser("rank", help="latent and out-degree rankings from a fit")
    common(p)
    p.add_argument("--data")
    p.add_argument("--params")
    p.add_argument("--horizon-day", dest="horizon_day", type=int)

    p = sub.add_parser("baseline", help="I&SI, Glicko or aggregate-ranking baselines")
    common(p)
    p.add_argument("--data")
    p.add_argument("--method", choices=BASELINES)
    p.add_argument("--steps", type=int)
    p.add_argument("--restarts", type=int)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _resolve(args.command, args)
        out = Path(cfg["out"])
        out.mkdir(parents=True, exist_ok=True)
        inputs = COMMANDS[args.command](cfg, out)
        _manifest(args.command, cfg, out, inputs)
    except (UsageError, DataError, FileNotFoundError) as exc:
        print(f"hawkesrank {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FitError, SamplerError, ExplosiveDrawError, UnstableProcessError, FloatingPointError) as exc:
        print(f"hawkesrank {args.command}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"hawkesrank {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
