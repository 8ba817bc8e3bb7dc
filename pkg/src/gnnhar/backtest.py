"""Rolling-window backtests with monthly recalibration.

Each window holds ``train_months`` of training days followed by
``validation_months`` of validation days and is followed by a test block of
``refit_months`` months.  Within a window the spillover graph is re-estimated
from the window's returns, every model is refit for every horizon, and the
test block is forecast day by day.  The origin date ``t`` of a forecast is the
first day of its target ``RV_t + ... + RV_{t+h}``; its features only use days
before ``t``.

Outputs go to one file per (model, window) so interrupted runs resume and
parallel windows never write the same file.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import os
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .data import LAG_WINDOW, RvPanel, horizon_sum, lag_feature_tensor
from .errors import ConfigError, DataError, GnnharError, InsufficientHistoryError, NumericalError, ParseError
from .evaluation import mad_details
from .graph import default_penalty_grid, glasso_select, standardized_covariance, write_edges
from .model import DEFAULT_HIDDEN_DIM, GraphOperators, ModelSpec, forecast, params_to_dict
from .train import (
    EstimationCriterion,
    TrainConfig,
    TrainingData,
    ensemble_fit,
    full_sample_fit,
    grid_search_hidden_dim,
    ols_fit,
)

logger = logging.getLogger(__name__)

FORECAST_HEADER = ["origin_date", "asset", "horizon", "model", "criterion", "forecast"]
CURVE_HEADER = ["epoch", "train_loss", "val_loss"]
MAD_HEADER = ["window", "model", "layers", "mad"]
DEFAULT_MODELS = (
    "HAR_M", "GHAR_M", "GHAR2Hop_M", "GNNHAR1L_M", "GNNHAR2L_M", "GNNHAR3L_M",
    "HAR_Q", "GHAR_Q", "GHAR2Hop_Q", "GNNHAR1L_Q", "GNNHAR2L_Q", "GNNHAR3L_Q",
)


@dataclass(frozen=True)
class BacktestSpec:
    window_days: Optional[int] = 1000
    window_tolerance: float = 0.05
    train_months: int = 36
    validation_months: int = 12
    refit_months: int = 1
    horizons: tuple = (0, 4, 21)
    models: tuple = DEFAULT_MODELS
    # None -> grid search on the first window with a one-layer GNNHAR
    hidden_dim: Optional[int] = None
    max_windows: Optional[int] = None
    qlike_floor: float = 1e-8
    glasso_folds: int = 5
    glasso_grid_size: int = 20
    glasso_rule: str = "one_se"
    train: TrainConfig = field(default_factory=TrainConfig)

    def problems(self) -> list:
        out = []
        if self.train_months < 1:
            out.append("train_months: must be >= 1")
        if self.validation_months < 1:
            out.append("validation_months: must be >= 1")
        if self.refit_months < 1:
            out.append("refit_months: must be >= 1")
        if self.window_days is not None and self.window_days < 1:
            out.append("window_days: must be positive or null")
        if not 0 <= self.window_tolerance < 1:
            out.append("window_tolerance: must lie in [0, 1)")
        if not self.horizons:
            out.append("horizons: must be nonempty")
        if any(int(h) < 0 for h in self.horizons):
            out.append("horizons: must be >= 0")
        if len(set(self.horizons)) != len(self.horizons):
            out.append("horizons: duplicates")
        if not self.models:
            out.append("models: must be nonempty")
        for m in self.models:
            try:
                ModelSpec.parse(m)
            except ValueError:
                out.append(f"models: cannot parse {m!r}")
        if len(set(self.models)) != len(self.models):
            out.append("models: duplicates")
        if self.hidden_dim is not None and self.hidden_dim < 1:
            out.append("hidden_dim: must be >= 1 or null")
        if self.max_windows is not None and self.max_windows < 1:
            out.append("max_windows: must be >= 1 or null")
        if not self.qlike_floor > 0:
            out.append("qlike_floor: must be positive")
        if self.glasso_folds < 2:
            out.append("glasso_folds: must be >= 2")
        if self.glasso_grid_size < 1:
            out.append("glasso_grid_size: must be >= 1")
        if self.glasso_rule not in ("best", "one_se"):
            out.append("glasso_rule: must be 'best' or 'one_se'")
        out += [f"train.{p}" for p in self.train.problems()]
        return out

    def to_dict(self) -> dict:
        d = asdict(self)
        d["horizons"] = list(self.horizons)
        d["models"] = list(self.models)
        d["train"]["hidden_dim_grid"] = list(self.train.hidden_dim_grid)
        return d


@dataclass(frozen=True)
class Window:
    index: int
    train: tuple
    validation: tuple
    test: tuple
    test_month: str

    @property
    def window_days(self) -> int:
        return self.validation[1] - self.train[0]


@dataclass
class ForecastSet:
    model: str
    criterion: str
    horizon: int
    dates: np.ndarray
    assets: tuple
    values: np.ndarray = field(repr=False)


def _month_index(dates) -> np.ndarray:
    return np.asarray(dates, dtype="datetime64[D]").astype("datetime64[M]").astype(np.int64)


def make_windows(dates, spec: BacktestSpec) -> list:
    """Monthly rolling windows over a trading calendar.

    The first test block starts at the first month preceded by
    ``train_months + validation_months`` complete months of data.
    """
    dates = np.asarray(dates, dtype="datetime64[D]")
    months = _month_index(dates)
    if months.size == 0:
        raise InsufficientHistoryError("empty calendar")
    span = spec.train_months + spec.validation_months
    first = months[0]
    # a leading partial month does not count as history
    month_start = dates[0].astype("datetime64[M]").astype("datetime64[D]")
    if dates[0] != np.busday_offset(month_start, 0, roll="forward"):
        first += 1
    k0 = first + span
    last = months[-1]
    if k0 > last:
        need = span + 1
        have = int(last - months[0] + 1)
        raise InsufficientHistoryError(
            f"need {need} months of data ({span} window + 1 test), have {have}"
        )
    starts = np.searchsorted(months, np.arange(months[0], last + 2))

    def day(month):
        return int(starts[month - months[0]])

    out = []
    k = k0
    while k <= last:
        a, b, c = day(k - span), day(k - spec.validation_months), day(k)
        d = day(min(k + spec.refit_months, last + 1))
        if c == d:
            k += spec.refit_months
            continue
        w = Window(len(out), (a, b), (b, c), (c, d), str(np.datetime64(int(k), "M")))
        if b <= max(a, LAG_WINDOW):
            raise InsufficientHistoryError(f"window {w.index}: no training day has 22 days of lag history")
        if spec.window_days is not None:
            lo = spec.window_days * (1 - spec.window_tolerance)
            hi = spec.window_days * (1 + spec.window_tolerance)
            if not lo <= w.window_days <= hi:
                raise ConfigError([
                    f"window {w.index} ({w.test_month}) spans {w.window_days} trading days, "
                    f"outside {spec.window_days} +- {spec.window_tolerance:.0%}"
                ])
        out.append(w)
        if spec.max_windows is not None and len(out) >= spec.max_windows:
            break
        k += spec.refit_months
    return out


def derive_seed(master: int, window: int, model: str, horizon: int) -> int:
    """Seed that depends on the model name, not its position in the model list."""
    ss = np.random.SeedSequence([int(master) & 0xFFFFFFFF, window, zlib.crc32(model.encode()), horizon])
    return int(ss.generate_state(1)[0] & 0x7FFFFFFF)


def _origins(lo, hi, h):
    """Origins in ``[lo, hi)`` with full lag history whose targets end before ``hi``."""
    return np.arange(max(lo, LAG_WINDOW), hi - h)


def digest(array_or_bytes) -> str:
    if isinstance(array_or_bytes, (bytes, bytearray)):
        data = bytes(array_or_bytes)
    else:
        data = np.ascontiguousarray(array_or_bytes).tobytes()
    return hashlib.sha256(data).hexdigest()


def _atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


# ---------------------------------------------------------------------------
# per-window work


class _Context:
    """Inputs shared by all windows of one run."""

    def __init__(self, panel: RvPanel, returns, spec: BacktestSpec, out_dir, adjacency, hidden_dims):
        self.panel = panel
        self.returns = None if returns is None else np.asarray(returns, dtype=float)
        self.spec = spec
        self.out = None if out_dir is None else Path(out_dir)
        self.adjacency = adjacency
        self.hidden_dims = hidden_dims
        self.features = lag_feature_tensor(panel.values, np.arange(LAG_WINDOW, panel.n_days + 1))
        self.targets = {h: horizon_sum(panel.values, h) for h in spec.horizons}

    def v(self, origins):
        return self.features[origins - LAG_WINDOW]

    def y(self, origins, h):
        return self.targets[h][origins]

    def graph(self, w: Window):
        if self.adjacency is not None:
            return np.asarray(self.adjacency), None
        if self.returns is None:
            raise DataError("no returns supplied and no fixed adjacency given")
        x = self.returns[w.train[0]:w.validation[1]]
        grid = default_penalty_grid(standardized_covariance(x), n=self.spec.glasso_grid_size)
        sel = glasso_select(x, grid, folds=self.spec.glasso_folds, seed=w.index, rule=self.spec.glasso_rule)
        return sel.adjacency, sel.penalty


def _fit(ctx: _Context, mspec: ModelSpec, w: Window, h: int, ops, seed: int):
    spec = ctx.spec
    crit = EstimationCriterion.from_code(mspec.criterion, spec.qlike_floor)
    full = _origins(w.train[0], w.validation[1], h)
    if mspec.is_linear and mspec.criterion == "M":
        params = ols_fit(ctx.v(full), ctx.y(full, h), mspec.kind, ops, ctx.panel.assets)
        return [params], None
    tr = _origins(w.train[0], w.train[1], h)
    va = _origins(w.validation[0], w.validation[1], h)
    if tr.size == 0 or va.size == 0:
        raise InsufficientHistoryError(f"window {w.index}: empty training or validation range for h={h}")
    lo = full[0]
    days = np.arange(lo, full[-1] + 1)
    data = TrainingData(ctx.v(days), ctx.y(days, h), ops)
    split = (tr - lo, va - lo)
    cfg = replace(spec.train, seed=seed)
    if mspec.is_linear:
        ens = full_sample_fit(mspec, data, split, crit, cfg, full_days=full - lo)
    else:
        ens = ensemble_fit(mspec, data, split, crit, cfg)
    return [m.params for m in ens.members], ens


def _model_paths(out: Path, model: str, w: Window):
    stem = f"w{w.index:04d}"
    return {
        "forecast": out / "forecasts" / model / f"{stem}.csv",
        "params": out / "params" / model / f"{stem}.json",
        "curves": out / "curves" / model / f"{stem}.csv",
        "mad": out / "mad" / model / f"{stem}.csv",
    }


def _run_model_window(ctx: _Context, model: str, w: Window, ops):
    mspec = ModelSpec.parse(model, hidden_dim=ctx.hidden_dims.get(model[-1], DEFAULT_HIDDEN_DIM))
    test = np.arange(w.test[0], w.test[1])
    dates = ctx.panel.dates[test]
    rows, params_doc, curve_rows, mad_rows = [], {}, [], []
    base, crit = model.rsplit("_", 1)
    for h in ctx.spec.horizons:
        seed = derive_seed(ctx.spec.train.seed, w.index, model, h)
        members, ens = _fit(ctx, mspec, w, h, ops, seed)
        v_test = ctx.v(test)
        pred = forecast(members[0], v_test, ops) if ens is None else ens.predict(v_test, ops)
        if not np.all(np.isfinite(pred)):
            raise NumericalError(f"{model}: non-finite forecasts in window {w.index}")
        for d, row in zip(dates, pred):
            for a, val in zip(ctx.panel.assets, row):
                rows.append((str(d), a, h, base, crit, repr(float(val))))
        params_doc[str(h)] = [params_to_dict(p) for p in members]
        if ens is not None:
            for k, m in enumerate(ens.members):
                for e, tl, vl in m.training_curve:
                    curve_rows.append((h, k, int(e), repr(float(tl)), repr(float(vl))))
            if mspec.kind == "GNNHAR" and h == ctx.spec.horizons[0]:
                hidden = ens.hidden(v_test, ops)
                excluded = 0
                for hd in hidden:
                    value, bad = mad_details(hd, ops.adjacency)
                    excluded += bad
                    mad_rows.append((w.index, model, mspec.layers, repr(value)))
                if excluded:
                    logger.info("%s window %d: %d zero-norm node representations left out of MAD",
                                model, w.index, excluded)
    return rows, params_doc, curve_rows, mad_rows, mspec


def run_window(ctx: _Context, w: Window) -> list:
    """Fit and forecast every pending model of one window; returns models done."""
    pending = [m for m in ctx.spec.models
               if ctx.out is None or not _model_paths(ctx.out, m, w)["forecast"].exists()]
    if not pending:
        return []
    adjacency, penalty = ctx.graph(w)
    ops = GraphOperators.from_adjacency(adjacency)
    results = {}
    if ctx.out is not None:
        gpath = ctx.out / "graphs" / f"w{w.index:04d}.csv"
        gpath.parent.mkdir(parents=True, exist_ok=True)
        write_edges(adjacency, ctx.panel.assets, gpath)
    for model in pending:
        try:
            rows, params_doc, curve_rows, mad_rows, mspec = _run_model_window(ctx, model, w, ops)
        except GnnharError as exc:
            exc.args = (f"window {w.index} ({w.test_month}), model {model}: {exc.args[0] if exc.args else exc}",) + exc.args[1:]
            raise
        results[model] = rows
        if ctx.out is None:
            continue
        p = _model_paths(ctx.out, model, w)
        doc = {"model": model, "window": w.index, "test_month": w.test_month, "penalty": penalty,
               "hidden_dim": mspec.hidden_dim if mspec.kind == "GNNHAR" else None, "horizons": params_doc}
        _atomic_write(p["params"], json.dumps(doc, indent=1, sort_keys=True) + "\n")
        if curve_rows:
            _atomic_write(p["curves"], _csv_text(["horizon", "member"] + CURVE_HEADER, curve_rows))
        if mad_rows:
            _atomic_write(p["mad"], _csv_text(MAD_HEADER, mad_rows))
        # forecast file last: its presence marks the (model, window) as done
        _atomic_write(p["forecast"], _csv_text(FORECAST_HEADER, rows))
    return results


_WORKER_CTX = None


def _worker_init(ctx):
    global _WORKER_CTX
    _WORKER_CTX = ctx


def _worker_run(w):
    run_window(_WORKER_CTX, w)
    return w.index


# ---------------------------------------------------------------------------
# driver


@dataclass
class BacktestResult:
    windows: list
    forecasts: list
    hidden_dims: dict


def _select_hidden_dims(ctx: _Context, windows) -> dict:
    """Hidden width per estimation criterion, from the first window."""
    spec = ctx.spec
    crits = sorted({m[-1] for m in spec.models if m.startswith("GNNHAR")})
    if not crits:
        return {}
    if spec.hidden_dim is not None:
        return {c: spec.hidden_dim for c in crits}
    cache = None if ctx.out is None else ctx.out / "hidden_dim.json"
    if cache is not None and cache.exists():
        doc = json.loads(cache.read_text())
        if all(c in doc["selected"] for c in crits):
            return {c: int(doc["selected"][c]) for c in crits}
    w = windows[0]
    adjacency, _ = ctx.graph(w)
    ops = GraphOperators.from_adjacency(adjacency)
    h = spec.horizons[0]
    tr = _origins(w.train[0], w.train[1], h)
    va = _origins(w.validation[0], w.validation[1], h)
    lo, hi = tr[0], va[-1] + 1
    days = np.arange(lo, hi)
    data = TrainingData(ctx.v(days), ctx.y(days, h), ops)
    selected, tables = {}, {}
    for c in crits:
        mspec = ModelSpec("GNNHAR", c, 1)
        cfg = replace(spec.train, seed=derive_seed(spec.train.seed, 0, f"grid_{c}", h))
        crit = EstimationCriterion.from_code(c, spec.qlike_floor)
        best, table = grid_search_hidden_dim(mspec, data, (tr - lo, va - lo), crit, cfg)
        selected[c] = best
        tables[c] = {str(k): v for k, v in table.items()}
    if cache is not None:
        _atomic_write(cache, json.dumps({"selected": selected, "validation_loss": tables}, indent=1, sort_keys=True) + "\n")
    return selected


def run_backtest(panel: RvPanel, returns, index_rv=None, spec: BacktestSpec = BacktestSpec(),
                 out_dir=None, workers: int = 1, adjacency=None, extra_manifest: Optional[dict] = None
                 ) -> BacktestResult:
    """Run (or resume) a rolling backtest.

    ``returns`` is the aligned ``T x N`` daily return matrix used for the
    per-window graph; pass ``adjacency`` instead to hold the graph fixed.
    With ``out_dir`` every (model, window) is persisted and skipped when
    already present.  ``index_rv`` is only digested into the manifest.
    """
    problems = spec.problems()
    if problems:
        raise ConfigError(problems)
    if returns is not None and np.shape(returns) != panel.values.shape:
        raise DataError(f"returns shape {np.shape(returns)} does not match panel {panel.values.shape}")
    windows = make_windows(panel.dates, spec)
    ctx = _Context(panel, returns, spec, out_dir, adjacency, {})
    ctx.hidden_dims = _select_hidden_dims(ctx, windows)
    if ctx.out is not None:
        ctx.out.mkdir(parents=True, exist_ok=True)
        manifest = {
            "spec": spec.to_dict(),
            "seed": spec.train.seed,
            "hidden_dims": dict(sorted(ctx.hidden_dims.items())),
            "n_windows": len(windows),
            "windows": [[w.test_month, w.train[0], w.validation[0], w.test[0], w.test[1]] for w in windows],
            "digests": {
                "panel": digest(panel.values),
                "dates": digest(panel.dates.astype("datetime64[D]").astype(np.int64)),
                "returns": None if returns is None else digest(np.asarray(returns, dtype=float)),
                "index_rv": None if index_rv is None else digest(np.asarray(index_rv, dtype=float)),
                "adjacency": None if adjacency is None else digest(np.asarray(adjacency, dtype=np.int64)),
            },
        }
        if extra_manifest:
            manifest.update(extra_manifest)
        _atomic_write(ctx.out / "manifest.json", json.dumps(manifest, indent=1, sort_keys=True) + "\n")

    in_memory = {}
    if workers > 1 and len(windows) > 1 and ctx.out is not None:
        with ProcessPoolExecutor(max_workers=workers, initializer=_worker_init, initargs=(ctx,)) as pool:
            for _ in pool.map(_worker_run, windows):
                pass
    else:
        for w in windows:
            res = run_window(ctx, w)
            if ctx.out is None:
                in_memory[w.index] = res
    if ctx.out is not None:
        forecasts = read_forecast_dir(ctx.out, spec.models, len(windows), panel.assets)
        write_forecasts(forecasts, ctx.out / "forecasts.csv")
    else:
        forecasts = _collect(in_memory, spec.models, panel.assets)
    return BacktestResult(windows, forecasts, dict(ctx.hidden_dims))


# ---------------------------------------------------------------------------
# forecast files


def _collect_rows(rows_by_model, models, assets) -> list:
    out = []
    pos = {a: i for i, a in enumerate(assets)}
    for model in models:
        base, crit = model.rsplit("_", 1)
        rows = rows_by_model.get(model, [])
        for h in sorted({int(r[2]) for r in rows}):
            sub = [r for r in rows if int(r[2]) == h]
            dates = sorted({r[0] for r in sub})
            dpos = {d: i for i, d in enumerate(dates)}
            values = np.full((len(dates), len(assets)), np.nan)
            for d, a, _, _, _, val in sub:
                values[dpos[d], pos[a]] = float(val)
            if np.isnan(values).any():
                raise DataError(f"{model} h={h}: forecast grid has holes")
            out.append(ForecastSet(model, crit, h, np.array(dates, dtype="datetime64[D]"), tuple(assets), values))
    return out


def _collect(in_memory, models, assets):
    rows = {m: [] for m in models}
    for idx in sorted(in_memory):
        for m, r in in_memory[idx].items():
            rows[m].extend(r)
    return _collect_rows(rows, models, assets)


def _read_forecast_file(path) -> list:
    with Path(path).open(newline="") as fh:
        r = csv.reader(fh)
        if next(r, None) != FORECAST_HEADER:
            raise ParseError(path, 1, "header", ",".join(FORECAST_HEADER))
        return [tuple(row) for row in r if row]


def read_forecast_dir(out_dir, models, n_windows, assets) -> list:
    out = Path(out_dir)
    rows = {}
    for m in models:
        rows[m] = []
        for k in range(n_windows):
            p = out / "forecasts" / m / f"w{k:04d}.csv"
            if not p.exists():
                raise DataError(f"missing forecast file {p}")
            rows[m].extend(_read_forecast_file(p))
    return _collect_rows(rows, models, assets)


def write_forecasts(forecasts: Sequence[ForecastSet], path) -> None:
    rows = []
    for fs in forecasts:
        base = fs.model.rsplit("_", 1)[0]
        for d, row in zip(fs.dates, fs.values):
            for a, v in zip(fs.assets, row):
                rows.append((str(d), a, fs.horizon, base, fs.criterion, repr(float(v))))
    _atomic_write(Path(path), _csv_text(FORECAST_HEADER, rows))


def read_forecasts(path) -> list:
    """Load a merged forecast CSV back into ForecastSets (model order of first appearance)."""
    rows = _read_forecast_file(path)
    models, assets = [], []
    by_model = {}
    for r in rows:
        m = f"{r[3]}_{r[4]}"
        if m not in by_model:
            by_model[m] = []
            models.append(m)
        if r[1] not in assets:
            assets.append(r[1])
        by_model[m].append(r)
    return _collect_rows(by_model, models, assets)
