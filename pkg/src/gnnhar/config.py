"""Run configuration: one JSON or YAML file drives a whole experiment.

Precedence is command-line flag > config file > built-in default.  Relative
paths in the file resolve against the file's directory.  Validation collects
every problem before raising, so one run reports all of them.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Optional

import yaml

from .backtest import BacktestSpec
from .errors import ConfigError
from .train import TrainConfig

SECTIONS = ("data", "synth", "rv", "glasso", "backtest", "train", "evaluate")
TOP_LEVEL = ("seed", "out", "workers") + SECTIONS

DATA_KEYS = ("rv", "returns", "index_rv", "intraday", "forecasts")
RV_DEFAULTS = {"delta_minutes": 5, "base_minutes": 1, "on_missing": "drop"}
GLASSO_DEFAULTS = {"folds": 5, "grid_size": 20, "rule": "one_se", "tol": 1e-6, "max_iter": 500}
EVAL_DEFAULTS = {"baseline": "HAR_M", "regime_quantile": 0.9, "mcs_alpha": 0.05, "mcs_reps": 1000,
                 "mcs_block": 10, "plots": True}
SYNTH_DEFAULTS = {
    "n_assets": 10,
    "days": 1500,
    "start": "2000-01-03",
    "graph": "ring",
    "edge_prob": 0.2,
    "space": "log",
    "noise_scale": 0.3,
    "log_mean": -9.0,
    "beta": [0.35, 0.3, 0.2],
    "gamma": [0.1, 0.0, 0.0],
    "theta": None,
    "gnn_gamma": None,
    "return_rho": 0.7,
    "burn_in": 500,
}
BACKTEST_KEYS = tuple(f.name for f in fields(BacktestSpec) if f.name not in ("train",))
TRAIN_KEYS = tuple(f.name for f in fields(TrainConfig) if f.name != "seed")


@dataclass
class RunConfig:
    seed: Optional[int] = None
    out: Optional[Path] = None
    workers: Optional[int] = None
    data: dict = field(default_factory=dict)
    synth: dict = field(default_factory=lambda: dict(SYNTH_DEFAULTS))
    rv: dict = field(default_factory=lambda: dict(RV_DEFAULTS))
    glasso: dict = field(default_factory=lambda: dict(GLASSO_DEFAULTS))
    backtest: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)
    evaluate: dict = field(default_factory=lambda: dict(EVAL_DEFAULTS))
    source: Optional[Path] = None

    def path(self, key: str) -> Optional[Path]:
        value = self.data.get(key)
        return None if value is None else Path(value)

    def train_config(self) -> TrainConfig:
        kw = dict(self.train)
        if "hidden_dim_grid" in kw:
            kw["hidden_dim_grid"] = tuple(int(d) for d in kw["hidden_dim_grid"])
        seed = self.seed if _is_int(self.seed) else 0
        return TrainConfig(seed=seed, **kw)

    def backtest_spec(self) -> BacktestSpec:
        kw = dict(self.backtest)
        for key in ("horizons", "models"):
            if key in kw:
                kw[key] = tuple(kw[key])
        kw.setdefault("glasso_folds", self.glasso["folds"])
        kw.setdefault("glasso_grid_size", self.glasso["grid_size"])
        kw.setdefault("glasso_rule", self.glasso["rule"])
        return BacktestSpec(train=self.train_config(), **kw)


def _read(path: Path) -> dict:
    text = path.read_text()
    try:
        doc = json.loads(text) if path.suffix.lower() == ".json" else yaml.safe_load(text)
    except (json.JSONDecodeError, yaml.YAMLError) as exc:
        raise ConfigError([f"{path}: cannot parse config ({exc.__class__.__name__}: {str(exc).splitlines()[0]})"])
    if doc is None:
        return {}
    if not isinstance(doc, dict):
        raise ConfigError([f"{path}: top level must be a mapping"])
    return doc


def _check_keys(section: str, given: dict, allowed, problems: list) -> None:
    for key in given:
        if key not in allowed:
            problems.append(f"{section}.{key}: unknown key")


def _is_int(x) -> bool:
    return isinstance(x, int) and not isinstance(x, bool)


def load_config(path=None, overrides: Optional[dict] = None) -> RunConfig:
    """Read, merge and validate a run config.

    ``overrides`` holds command-line values (``seed``, ``out``, ``workers``
    and ``data`` paths) that win over the file.
    """
    problems = []
    doc = {}
    base = Path.cwd()
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError([f"config: file not found: {path}"])
        doc = _read(path)
        base = path.resolve().parent
    _check_keys("config", doc, TOP_LEVEL, problems)
    cfg = RunConfig(source=path)
    for name in SECTIONS:
        section = doc.get(name) or {}
        if not isinstance(section, dict):
            problems.append(f"{name}: must be a mapping")
            continue
        allowed = {
            "data": DATA_KEYS, "synth": SYNTH_DEFAULTS, "rv": RV_DEFAULTS, "glasso": GLASSO_DEFAULTS,
            "backtest": BACKTEST_KEYS, "train": TRAIN_KEYS, "evaluate": EVAL_DEFAULTS,
        }[name]
        _check_keys(name, section, allowed, problems)
        if name == "data":
            section = {k: None if v is None else str(base / Path(v)) for k, v in section.items()}
        getattr(cfg, name).update({k: v for k, v in section.items() if k in allowed})
    for key in ("seed", "out", "workers"):
        if key in doc:
            setattr(cfg, key, doc[key])
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key in DATA_KEYS:
            cfg.data[key] = value
        else:
            setattr(cfg, key, value)
    if cfg.out is not None:
        cfg.out = Path(cfg.out)

    if cfg.seed is not None and not _is_int(cfg.seed):
        problems.append("seed: must be an integer")
    if cfg.workers is not None and (not _is_int(cfg.workers) or cfg.workers < 1):
        problems.append("workers: must be a positive integer")
    problems += _validate_sections(cfg)
    if problems:
        raise ConfigError(problems)
    return cfg


def _number(x) -> float:
    if isinstance(x, bool) or not isinstance(x, (int, float)):
        raise TypeError
    return float(x)


def _validate_sections(cfg: RunConfig) -> list:
    problems = []

    def check(test, message):
        try:
            ok = test()
        except (TypeError, ValueError):
            ok = False
        if not ok:
            problems.append(message)

    s = cfg.synth
    if not _is_int(s["n_assets"]) or s["n_assets"] < 2:
        problems.append("synth.n_assets: must be an integer >= 2")
    if not _is_int(s["days"]) or s["days"] < 30:
        problems.append("synth.days: must be an integer >= 30")
    if s["graph"] not in ("ring", "chain", "star", "complete", "empty", "erdos_renyi"):
        problems.append("synth.graph: one of ring, chain, star, complete, empty, erdos_renyi")
    check(lambda: 0 <= _number(s["edge_prob"]) <= 1, "synth.edge_prob: must lie in [0, 1]")
    if s["space"] not in ("log", "level"):
        problems.append("synth.space: must be 'log' or 'level'")
    check(lambda: _number(s["noise_scale"]) >= 0, "synth.noise_scale: must be >= 0")
    check(lambda: _number(s["log_mean"]) == _number(s["log_mean"]), "synth.log_mean: must be a number")
    for key in ("beta", "gamma"):
        check(lambda: len(s[key]) == 3 and all(_number(x) == _number(x) for x in s[key]),
              f"synth.{key}: must be a list of 3 numbers")
    if (s["theta"] is None) != (s["gnn_gamma"] is None):
        problems.append("synth.theta / synth.gnn_gamma: give both or neither")
    check(lambda: -1 < _number(s["return_rho"]) < 1, "synth.return_rho: must lie in (-1, 1)")

    r = cfg.rv
    if not _is_int(r["delta_minutes"]) or not _is_int(r["base_minutes"]) or r["base_minutes"] < 1:
        problems.append("rv.delta_minutes / rv.base_minutes: positive integers required")
    elif r["delta_minutes"] % r["base_minutes"]:
        problems.append("rv.delta_minutes: must be divisible by rv.base_minutes")
    if r["on_missing"] not in ("drop", "error"):
        problems.append("rv.on_missing: must be 'drop' or 'error'")

    g = cfg.glasso
    if not _is_int(g["folds"]) or g["folds"] < 2:
        problems.append("glasso.folds: must be an integer >= 2")
    if not _is_int(g["grid_size"]) or g["grid_size"] < 1:
        problems.append("glasso.grid_size: must be an integer >= 1")
    if g["rule"] not in ("best", "one_se"):
        problems.append("glasso.rule: must be 'best' or 'one_se'")

    e = cfg.evaluate
    check(lambda: 0 < _number(e["regime_quantile"]) < 1, "evaluate.regime_quantile: must lie in (0, 1)")
    check(lambda: 0 < _number(e["mcs_alpha"]) < 1, "evaluate.mcs_alpha: must lie in (0, 1)")
    if not _is_int(e["mcs_reps"]) or e["mcs_reps"] < 1:
        problems.append("evaluate.mcs_reps: must be a positive integer")
    if not _is_int(e["mcs_block"]) or e["mcs_block"] < 1:
        problems.append("evaluate.mcs_block: must be a positive integer")

    try:
        spec = cfg.backtest_spec()
        problems += [f"backtest.{p}" if not p.startswith("train.") else p for p in spec.problems()]
    except (TypeError, ValueError) as exc:
        problems.append(f"backtest/train: {exc}")
    return problems


def require(cfg: RunConfig, *, seed: bool = False, out: bool = False, data=()) -> None:
    """Per-command requirements, all reported together."""
    problems = []
    if seed and cfg.seed is None:
        problems.append("seed: required (set it in the config or pass --seed)")
    if out and cfg.out is None:
        problems.append("out: required (set it in the config or pass --out)")
    for key in data:
        value = cfg.data.get(key)
        if value is None:
            problems.append(f"data.{key}: required")
        elif not Path(value).exists():
            problems.append(f"data.{key}: path does not exist: {value}")
    if problems:
        raise ConfigError(problems)
