"""Assemble the evaluation report bundle from a finished backtest directory."""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from . import plotting
from .backtest import MAD_HEADER, read_forecasts
from .errors import DataError, DegenerateStatisticError
from .evaluation import (
    LOSS_KINDS,
    SUMMARY_HEADER,
    TRAJECTORY_HEADER,
    coefficient_trajectory_report,
    common_losses,
    dm_table,
    error_ratio_report,
    fvu,
    loss_table,
    mcs,
    stratify_by_regime,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ReportSettings:
    baseline: str = "HAR_M"
    regime_quantile: float = 0.9
    mcs_alpha: float = 0.05
    mcs_reps: int = 1000
    mcs_block: int = 10
    seed: int = 0
    qlike_floor: float = 1e-8
    plots: bool = True


def _num(x) -> str:
    x = float(x)
    return "" if not np.isfinite(x) else format(x, ".10g")


def _write(path: Path, header, rows) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _loss_rows(table):
    return [[m] + [_num(v) for v in vals] for m, vals in table.rows()]


def _regime_masks(forecasts, index_rv, q):
    """Calm/turbulent masks over the shared forecast origins."""
    dates, values = index_rv
    origins = forecasts[0].dates
    pos = np.searchsorted(dates, origins)
    ok = (pos < len(dates))
    ok[ok] = dates[pos[ok]] == origins[ok]
    if not ok.all():
        raise DataError(f"index RV has no value for forecast date {origins[~ok][0]}")
    calm, turb = stratify_by_regime(np.asarray(values)[pos], q)
    return origins, {"calm": calm, "turbulent": turb}


def _params_records(bt_dir: Path, models):
    records = []
    for model in models:
        for p in sorted((bt_dir / "params" / model).glob("w*.json")):
            doc = json.loads(p.read_text())
            for h, members in sorted(doc["horizons"].items(), key=lambda kv: int(kv[0])):
                records.append((doc["window"], doc["test_month"], model, int(h), members))
    return records


def _mad_rows(bt_dir: Path, models):
    rows = []
    for model in models:
        for p in sorted((bt_dir / "mad" / model).glob("w*.csv")):
            with p.open(newline="") as fh:
                r = csv.reader(fh)
                if next(r, None) != MAD_HEADER:
                    raise DataError(f"{p}: unexpected MAD header")
                rows.extend(row for row in r if row)
    return rows


def build_report(bt_dir, panel, out_dir, index_rv: Optional[tuple] = None,
                 settings: ReportSettings = ReportSettings()) -> dict:
    """Write the report bundle for a backtest directory; returns the file list."""
    bt_dir = Path(bt_dir)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    forecasts = read_forecasts(bt_dir / "forecasts.csv")
    models = []
    for fs in forecasts:
        if fs.model not in models:
            models.append(fs.model)
    horizons = sorted({fs.horizon for fs in forecasts})
    s = settings
    written = []

    def emit(name, header, rows):
        _write(out / name, header, rows)
        written.append(name)

    table = loss_table(forecasts, panel, s.baseline, s.qlike_floor)
    emit("loss_table.csv", ["model"] + table.columns, _loss_rows(table))

    regimes = None
    if index_rv is not None:
        origins, masks = _regime_masks(forecasts, index_rv, s.regime_quantile)
        regimes = {}
        full = np.zeros(panel.n_days, bool)
        for name, mask in masks.items():
            t = loss_table(forecasts, panel, s.baseline, s.qlike_floor, day_mask=mask)
            emit(f"loss_table_{name}.csv", ["model"] + t.columns, _loss_rows(t))
            m = full.copy()
            m[np.searchsorted(panel.dates, origins[mask])] = True
            regimes[name] = m

    dm_rows_all = []
    mcs_rows = []
    for h in horizons:
        for kind in LOSS_KINDS:
            _, losses = common_losses(forecasts, panel, kind, h, models, s.qlike_floor)
            base = losses[models.index(s.baseline)]
            for m, lm in zip(models, losses):
                if m == s.baseline:
                    continue
                try:
                    rows = dm_table(lm, base, panel.assets, h, kind)
                except DegenerateStatisticError as exc:
                    logger.warning("DM %s vs %s h=%d %s: %s", m, s.baseline, h, kind, exc)
                    continue
                name = f"dm/{m}_vs_{s.baseline}_h{h}_{kind.lower()}.csv"
                emit(name, ["asset", "statistic", "p_value"], [(a, _num(st), _num(p)) for a, st, p in rows])
                dm_rows_all.append((m, h, kind, rows[-1][1], rows[-1][2]))
            if len(models) >= 2:
                daily = np.stack([lm.mean(axis=1) for lm in losses])
                res = mcs(daily, s.mcs_alpha, s.mcs_reps, s.mcs_block, s.seed, names=models)
                for m in models:
                    mcs_rows.append((h, kind, m, _num(res.p_values[m]), int(m in res.surviving)))
    emit("dm_summary.csv", ["model", "horizon", "loss", "statistic", "p_value"],
         [(m, h, k, _num(st), _num(p)) for m, h, k, st, p in dm_rows_all])
    emit("mcs.csv", ["horizon", "loss", "model", "p_value", "in_set"], mcs_rows)

    by_key = {(fs.model, fs.horizon): fs for fs in forecasts}
    fvu_daily = {}
    for h in horizons:
        base = by_key[(s.baseline, h)]
        rows = []
        for m in models:
            if m == s.baseline:
                continue
            series = fvu(by_key[(m, h)].values, base.values)
            if h == horizons[0]:
                fvu_daily[m] = series
            rows.extend((str(d), m, _num(v)) for d, v in zip(base.dates, series))
        emit(f"fvu_h{h}.csv", ["date", "model", "fvu"], rows)

    mad_rows = _mad_rows(bt_dir, models)
    emit("mad.csv", MAD_HEADER, mad_rows)

    summary = error_ratio_report(forecasts, panel, regimes)
    emit("boxplot_summary.csv", SUMMARY_HEADER, [r[:4] + tuple(_num(v) for v in r[4:]) for r in summary])

    traj = coefficient_trajectory_report(_params_records(bt_dir, models))
    emit("coefficients.csv", TRAJECTORY_HEADER, [r[:5] + (_num(r[5]),) for r in traj])

    if s.plots:
        figs = out / "figures"
        plotting.plot_qlike_shape(figs / "qlike_shape.png")
        plotting.plot_box_summaries(figs / "forecast_errors.png", summary, "error")
        plotting.plot_box_summaries(figs / "forecast_ratios.png", summary, "ratio")
        plotting.plot_trajectories(figs / "beta_d_trajectory.png", traj, "beta_d")
        plotting.plot_fvu(figs / "fvu.png", fvu_daily)
        mad_by = {}
        for _, model, _, value in mad_rows:
            mad_by.setdefault(model, []).append(float(value))
        plotting.plot_mad(figs / "mad.png", mad_by)
        written += sorted(str(p.relative_to(out)) for p in figs.glob("*.png"))
    return {"files": written, "loss_table": table}
