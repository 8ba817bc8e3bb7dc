"""Command-line entry point: ``gnnhar <command> [--config FILE] [--seed N] [--workers N] [--out DIR]``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical
failure.  Failures print one JSON line on stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .errors import ConfigError, GnnharError

logger = logging.getLogger("gnnhar")


def _synth_graph(kind: str, n: int, p: float, rng) -> np.ndarray:
    a = np.zeros((n, n), dtype=np.int64)
    if kind in ("ring", "chain"):
        for i in range(n - 1):
            a[i, i + 1] = a[i + 1, i] = 1
        if kind == "ring" and n > 2:
            a[0, n - 1] = a[n - 1, 0] = 1
    elif kind == "star":
        a[0, 1:] = a[1:, 0] = 1
    elif kind == "complete":
        a[:] = 1
        np.fill_diagonal(a, 0)
    elif kind == "erdos_renyi":
        upper = np.triu(rng.random((n, n)) < p, k=1)
        a = (upper | upper.T).astype(np.int64)
    return a


def cmd_synth(cfg) -> int:
    from .config import require
    from .data import write_index_rv, write_returns, write_rv_panel
    from .graph import normalize, write_edges
    from .model import GnnParams, LinearParams, params_to_dict
    from .synthetic import generate_synthetic_panel

    require(cfg, seed=True, out=True)
    s = cfg.synth
    n = s["n_assets"]
    rng = np.random.default_rng(cfg.seed)
    a = _synth_graph(s["graph"], n, s["edge_prob"], rng)
    beta = np.asarray(s["beta"], dtype=float)
    gamma = np.asarray(s["gamma"], dtype=float)
    # intercepts that put the linear steady state at the requested level
    level = float(s["log_mean"]) if s["space"] == "log" else float(np.exp(s["log_mean"]))
    wsum = normalize(a).sum(axis=1)
    alpha = level * (1.0 - beta.sum() - gamma.sum() * wsum)
    if s["theta"] is None:
        params = LinearParams(alpha, beta, gamma)
        extra = {}
    else:
        theta = np.asarray(s["theta"], dtype=float)
        params = GnnParams(alpha, beta, [theta.reshape(3, -1)], np.asarray(s["gnn_gamma"], dtype=float))
        extra = {"linear_spillover": gamma}
    out = cfg.out
    assets = tuple(f"A{i:02d}" for i in range(n))
    syn = generate_synthetic_panel(a, params, s["noise_scale"], s["days"], cfg.seed, space=s["space"],
                                   burn_in=s["burn_in"], start=s["start"], assets=assets,
                                   return_rho=s["return_rho"], **extra)
    out.mkdir(parents=True, exist_ok=True)
    write_rv_panel(syn.panel, out / "rv.csv")
    write_returns(syn.panel.dates, assets, syn.returns, out / "returns.csv")
    write_index_rv(syn.panel.dates, syn.index_rv, out / "index_rv.csv")
    write_edges(a, assets, out / "graph.csv")
    truth = {"seed": cfg.seed, "space": s["space"], "noise_scale": s["noise_scale"],
             "params": params_to_dict(params), "linear_spillover": gamma.tolist(),
             "return_rho": s["return_rho"], "precision": syn.precision.tolist()}
    (out / "truth.json").write_text(json.dumps(truth, indent=1, sort_keys=True) + "\n")
    print(f"synth: {syn.panel.n_days} days x {n} assets -> {out}")
    return 0


def cmd_compute_rv(cfg) -> int:
    from .config import require
    from .data import (
        compute_rv_panel,
        daily_returns_from_intraday,
        load_intraday,
        write_index_rv,
        write_returns,
        write_rv_panel,
    )

    require(cfg, out=True, data=("intraday",))
    series = load_intraday(cfg.data["intraday"])
    r = cfg.rv
    panel = compute_rv_panel(series, r["delta_minutes"], r["base_minutes"], on_missing=r["on_missing"])
    returns = daily_returns_from_intraday(series, panel)
    cfg.out.mkdir(parents=True, exist_ok=True)
    write_rv_panel(panel, cfg.out / "rv.csv")
    write_returns(panel.dates, panel.assets, returns, cfg.out / "returns.csv")
    write_index_rv(panel.dates, panel.values.mean(axis=1), cfg.out / "index_rv.csv")
    print(f"compute-rv: {panel.n_days} days x {panel.n_assets} assets -> {cfg.out}")
    return 0


def cmd_estimate_graph(cfg) -> int:
    from .config import require
    from .data import load_returns
    from .graph import (
        default_penalty_grid,
        diameter,
        glasso_select,
        standardized_covariance,
        write_edges,
        write_spd_report,
    )

    require(cfg, seed=True, out=True, data=("returns",))
    dates, assets, x = load_returns(cfg.data["returns"])
    g = cfg.glasso
    grid = default_penalty_grid(standardized_covariance(x), n=g["grid_size"])
    sel = glasso_select(x, grid, folds=g["folds"], seed=cfg.seed, tol=g["tol"], max_iter=g["max_iter"], rule=g["rule"])
    cfg.out.mkdir(parents=True, exist_ok=True)
    write_edges(sel.adjacency, assets, cfg.out / "edges.csv")
    write_spd_report(sel.adjacency, cfg.out / "spd.csv")
    doc = {"penalty": sel.penalty, "grid": sel.grid.tolist(), "cv_scores": sel.cv_scores.tolist(),
           "n_edges": int(sel.adjacency.sum() // 2), "diameter": diameter(sel.adjacency), "rule": g["rule"]}
    (cfg.out / "glasso.json").write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")
    print(f"estimate-graph: {doc['n_edges']} edges at penalty {sel.penalty:.4g} -> {cfg.out}")
    return 0


def _file_digest(path) -> str:
    from .backtest import digest

    return digest(Path(path).read_bytes())


def cmd_backtest(cfg) -> int:
    from .backtest import run_backtest
    from .config import require
    from .data import load_index_rv, load_returns, load_rv_panel

    require(cfg, seed=True, out=True, data=("rv", "returns"))
    panel = load_rv_panel(cfg.data["rv"], on_missing=cfg.rv["on_missing"])
    returns = load_returns(cfg.data["returns"], panel)
    index_rv = None
    inputs = {"rv": _file_digest(cfg.data["rv"]), "returns": _file_digest(cfg.data["returns"])}
    if cfg.data.get("index_rv"):
        index_rv = load_index_rv(cfg.data["index_rv"])[1]
        inputs["index_rv"] = _file_digest(cfg.data["index_rv"])
    spec = cfg.backtest_spec()
    workers = cfg.workers or os.cpu_count() or 1
    res = run_backtest(panel, returns, index_rv, spec, out_dir=cfg.out, workers=workers,
                       extra_manifest={"input_files": inputs})
    print(f"backtest: {len(res.windows)} windows, {len(res.forecasts)} forecast sets -> {cfg.out}")
    return 0


def cmd_evaluate(cfg) -> int:
    from .config import require
    from .data import load_index_rv, load_rv_panel
    from .report import ReportSettings, build_report

    require(cfg, seed=True, out=True, data=("rv", "forecasts"))
    panel = load_rv_panel(cfg.data["rv"], on_missing=cfg.rv["on_missing"])
    index_rv = load_index_rv(cfg.data["index_rv"]) if cfg.data.get("index_rv") else None
    e = cfg.evaluate
    settings = ReportSettings(
        baseline=e["baseline"], regime_quantile=e["regime_quantile"], mcs_alpha=e["mcs_alpha"],
        mcs_reps=e["mcs_reps"], mcs_block=e["mcs_block"], seed=cfg.seed, plots=bool(e["plots"]),
        qlike_floor=cfg.backtest_spec().qlike_floor,
    )
    res = build_report(cfg.data["forecasts"], panel, cfg.out, index_rv, settings)
    print(f"evaluate: {len(res['files'])} files -> {cfg.out}")
    return 0


COMMANDS = {
    "compute-rv": (cmd_compute_rv, "realized volatility panel from intraday prices"),
    "estimate-graph": (cmd_estimate_graph, "GLASSO spillover graph from daily returns"),
    "backtest": (cmd_backtest, "rolling-window fit and forecast"),
    "evaluate": (cmd_evaluate, "loss tables, tests and diagnostics for a backtest"),
    "synth": (cmd_synth, "synthetic RV panel with a known graph"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gnnhar", description="Graph-augmented HAR volatility forecasting.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", type=Path, help="JSON or YAML run config")
        p.add_argument("--seed", type=int, help="master seed (overrides config)")
        p.add_argument("--workers", type=int, help="parallel processes (default: all CPUs)")
        p.add_argument("--out", type=Path, help="output directory (overrides config)")
        if name == "compute-rv":
            p.add_argument("--intraday", help="intraday price CSV")
            p.add_argument("--delta", type=int, help="sampling interval in minutes")
            p.add_argument("--base", type=int, help="subsampling offset step in minutes")
        if name == "estimate-graph":
            p.add_argument("--returns", help="daily returns CSV")
        if name == "backtest":
            p.add_argument("--rv", help="RV panel CSV")
            p.add_argument("--returns", help="daily returns CSV")
            p.add_argument("--index-rv", dest="index_rv", help="index RV CSV")
        if name == "evaluate":
            p.add_argument("--forecasts", help="backtest output directory")
            p.add_argument("--actual", dest="rv", help="RV panel CSV")
            p.add_argument("--index-rv", dest="index_rv", help="index RV CSV")
            p.add_argument("--baseline", help="baseline model id, e.g. HAR_M")
    return parser


def _error_line(exc: Exception, code: int) -> str:
    doc = {"error": type(exc).__name__, "exit_code": code, "message": str(exc).replace("\n", " ")}
    if isinstance(exc, ConfigError):
        doc["problems"] = exc.problems
    return json.dumps(doc, sort_keys=True)


def main(argv=None) -> int:
    from .config import load_config

    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    overrides = {"seed": args.seed, "workers": args.workers, "out": args.out}
    for key in ("intraday", "returns", "rv", "index_rv", "forecasts"):
        overrides[key] = getattr(args, key, None)
    try:
        cfg = load_config(args.config, overrides)
        if args.command == "compute-rv":
            if args.delta is not None:
                cfg.rv["delta_minutes"] = args.delta
            if args.base is not None:
                cfg.rv["base_minutes"] = args.base
            if cfg.rv["delta_minutes"] % cfg.rv["base_minutes"]:
                raise ConfigError(["rv.delta_minutes: must be divisible by rv.base_minutes"])
        if args.command == "evaluate" and args.baseline:
            cfg.evaluate["baseline"] = args.baseline
        return COMMANDS[args.command][0](cfg)
    except GnnharError as exc:
        err, code = exc, exc.exit_code
    except OSError as exc:
        err, code = exc, 3
    except ValueError as exc:
        # bad parameter values that slipped past config validation
        err, code = exc, 2
    print(_error_line(err, code), file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
