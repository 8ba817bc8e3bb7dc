"""Out-of-sample evaluation: loss tables, Diebold-Mariano tests, the model
confidence set, regime stratification, FVU and MAD diagnostics."""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import stats

from .errors import DataError, DegenerateStatisticError, ShapeError
from .graph import check_adjacency

logger = logging.getLogger(__name__)

LOSS_KINDS = ("MSE", "QLIKE")
CROSS_ROW = "__cross__"


# ---------------------------------------------------------------------------
# aligned losses and loss tables


def loss_matrix(actual, predicted, kind: str, floor: float = 1e-8) -> np.ndarray:
    """Elementwise squared error or QLIKE, same shape as the inputs."""
    actual = np.asarray(actual, dtype=float)
    predicted = np.asarray(predicted, dtype=float)
    if actual.shape != predicted.shape:
        raise ShapeError(f"actual {actual.shape} and predicted {predicted.shape} differ")
    if kind == "MSE":
        return (predicted - actual) ** 2
    if kind == "QLIKE":
        if np.any(actual <= 0):
            raise DataError("QLIKE needs strictly positive actual values")
        r = actual / np.maximum(predicted, floor)
        return r - np.log(r) - 1.0
    raise ValueError(f"unknown loss kind {kind!r}")


def align_actual(fs, panel):
    """Realized ``RV_t + ... + RV_{t+h}`` for each forecast origin that has one.

    Returns ``(mask over fs.dates, actual rows)``; origins whose target runs
    past the end of the panel are masked out.
    """
    if tuple(fs.assets) != tuple(panel.assets):
        raise DataError(f"{fs.model}: forecast assets do not match the panel")
    pos = np.searchsorted(panel.dates, fs.dates)
    ok = (pos < panel.n_days)
    ok[ok] = panel.dates[pos[ok]] == fs.dates[ok]
    if not ok.all():
        bad = fs.dates[~ok][0]
        raise DataError(f"{fs.model}: forecast origin {bad} is not a panel date")
    have = pos + fs.horizon < panel.n_days
    csum = np.vstack([np.zeros(panel.n_assets), np.cumsum(panel.values, axis=0)])
    p = pos[have]
    return have, csum[p + fs.horizon + 1] - csum[p]


@dataclass
class LossTable:
    models: list
    horizons: list
    baseline: str
    # raw[model][(h, kind)] = mean loss; ratio = raw / baseline raw
    raw: dict = field(repr=False)
    ratio: dict = field(repr=False)

    def rows(self):
        for m in self.models:
            yield m, [self.ratio[m][(h, k)] for h in self.horizons for k in LOSS_KINDS]

    @property
    def columns(self) -> list:
        return [f"h{h}_{k.lower()}_ratio" for h in self.horizons for k in LOSS_KINDS]


def _by_key(forecasts):
    out = {}
    for fs in forecasts:
        out[(fs.model, fs.horizon)] = fs
    return out


def common_losses(forecasts, panel, kind: str, horizon: int, models: Sequence[str],
                  floor: float = 1e-8, day_mask=None):
    """Per-model ``(days, assets)`` losses on the origins every model shares."""
    table = _by_key(forecasts)
    missing = [m for m in models if (m, horizon) not in table]
    if missing:
        raise DataError(f"no h={horizon} forecasts for {', '.join(missing)}")
    ref = table[(models[0], horizon)]
    out = []
    for m in models:
        fs = table[(m, horizon)]
        if not np.array_equal(fs.dates, ref.dates):
            raise DataError(f"{m} and {models[0]} forecast different origin dates at h={horizon}")
        have, actual = align_actual(fs, panel)
        keep = have if day_mask is None else have & np.asarray(day_mask, dtype=bool)
        values = fs.values[have]
        sel = keep[have]
        out.append(loss_matrix(actual[sel], values[sel], kind, floor))
    return ref.dates[keep], out


def loss_table(forecasts, panel, baseline: str = "HAR_M", floor: float = 1e-8, day_mask=None) -> LossTable:
    """Mean MSE and QLIKE per model and horizon, as ratios to ``baseline``.

    ``day_mask`` (aligned with the shared forecast origins) restricts the
    sample, e.g. to a volatility regime.
    """
    models = []
    for fs in forecasts:
        if fs.model not in models:
            models.append(fs.model)
    if baseline not in models:
        raise DataError(f"baseline model {baseline!r} has no forecasts")
    horizons = sorted({fs.horizon for fs in forecasts})
    raw = {m: {} for m in models}
    for h in horizons:
        for kind in LOSS_KINDS:
            _, losses = common_losses(forecasts, panel, kind, h, models, floor, day_mask)
            for m, lm in zip(models, losses):
                raw[m][(h, kind)] = float(np.mean(lm)) if lm.size else float("nan")
    ratio = {m: {k: raw[m][k] / raw[baseline][k] for k in raw[m]} for m in models}
    for k in ratio[baseline]:
        ratio[baseline][k] = 1.0
    return LossTable(models, horizons, baseline, raw, ratio)


# ---------------------------------------------------------------------------
# Diebold-Mariano


@dataclass(frozen=True)
class DmResult:
    statistic: float
    p_value: float
    cross_sectional: bool = False
    loss: str = ""


def newey_west_variance(d, lag: int) -> float:
    """Bartlett-weighted long-run variance of ``d`` with ``lag`` autocovariances."""
    d = np.asarray(d, dtype=float)
    n = d.size
    e = d - d.mean()
    lrv = e @ e / n
    for k in range(1, lag + 1):
        lrv += 2.0 * (1.0 - k / (lag + 1.0)) * (e[k:] @ e[:-k]) / n
    return float(lrv)


def dm_test(loss_a, loss_b, h: int = 0, loss: str = "") -> DmResult:
    """Two-sided Diebold-Mariano test with the Harvey small-sample correction.

    Positive statistics mean model A has the larger loss.
    """
    a = np.asarray(loss_a, dtype=float)
    b = np.asarray(loss_b, dtype=float)
    if a.shape != b.shape or a.ndim != 1:
        raise ShapeError("loss series must be 1-d and of equal length")
    n = a.size
    if n < 10:
        raise DataError(f"DM test needs at least 10 observations, got {n}")
    if h < 0:
        raise ValueError("h must be nonnegative")
    d = a - b
    if not np.any(d):
        return DmResult(0.0, 1.0, False, loss)
    lrv = newey_west_variance(d, h)
    if not lrv > 0:
        raise DegenerateStatisticError("loss differential has zero long-run variance")
    dm = d.mean() / np.sqrt(lrv / n)
    k = h + 1
    harvey = np.sqrt((n + 1 - 2 * k + k * (k - 1) / n) / n)
    stat = float(dm * harvey)
    p = float(2.0 * stats.t.sf(abs(stat), df=n - 1))
    return DmResult(stat, min(p, 1.0), False, loss)


def dm_test_cross_sectional(loss_a, loss_b, h: int = 0, loss: str = "") -> DmResult:
    """DM test on the per-day cross-sectional average of ``(days, assets)`` losses."""
    a = np.asarray(loss_a, dtype=float)
    b = np.asarray(loss_b, dtype=float)
    if a.shape != b.shape or a.ndim != 2:
        raise ShapeError("cross-sectional DM needs (days, assets) loss matrices of equal shape")
    r = dm_test(a.mean(axis=1), b.mean(axis=1), h, loss)
    return DmResult(r.statistic, r.p_value, True, loss)


def dm_table(loss_a, loss_b, assets, h: int = 0, loss: str = "") -> list:
    """Rows ``(asset, statistic, p_value)`` per asset plus the cross-sectional row."""
    rows = []
    for j, name in enumerate(assets):
        r = dm_test(loss_a[:, j], loss_b[:, j], h, loss)
        rows.append((name, r.statistic, r.p_value))
    r = dm_test_cross_sectional(loss_a, loss_b, h, loss)
    rows.append((CROSS_ROW, r.statistic, r.p_value))
    return rows


# ---------------------------------------------------------------------------
# model confidence set


@dataclass
class McsResult:
    surviving: list
    p_values: dict
    alpha: float
    eliminated: list


def block_bootstrap_indices(n: int, block: int, reps: int, rng: np.random.Generator) -> np.ndarray:
    """``(reps, n)`` moving-block bootstrap index draws."""
    block = max(1, min(block, n))
    n_blocks = -(-n // block)
    starts = rng.integers(0, n - block + 1, size=(reps, n_blocks))
    idx = (starts[:, :, None] + np.arange(block)).reshape(reps, -1)
    return idx[:, :n]


def mcs(losses, alpha: float = 0.05, bootstrap_reps: int = 1000, block_length: int = 10,
        seed: int = 0, names: Optional[Sequence[str]] = None) -> McsResult:
    """Model confidence set with the range statistic ``T_R``.

    ``losses`` is ``(models, days)``.  The null distribution comes from a
    moving-block bootstrap that resamples the same days for all models.
    Elimination p-values are running maxima, so the surviving set is
    ``{i : p_i >= alpha}``.
    """
    L = np.asarray(losses, dtype=float)
    if L.ndim != 2 or L.shape[0] < 2:
        raise ShapeError("mcs needs a (models >= 2, days) loss matrix")
    if not np.all(np.isfinite(L)):
        raise DegenerateStatisticError("losses contain non-finite values")
    m, n = L.shape
    if n < 2:
        raise DegenerateStatisticError("mcs needs at least two days")
    names = list(names) if names is not None else list(range(m))
    rng = np.random.default_rng(seed)
    idx = block_bootstrap_indices(n, block_length, bootstrap_reps, rng)
    means = L.mean(axis=1)
    boot = np.stack([L[:, r].mean(axis=1) for r in idx], axis=1)  # (m, reps)

    alive = list(range(m))
    p_values = {}
    eliminated = []
    running = 0.0
    while len(alive) > 1:
        a = np.array(alive)
        d = means[a][:, None] - means[a][None, :]
        db = boot[a][:, None, :] - boot[a][None, :, :]
        dev = db - d[:, :, None]
        var = np.mean(dev ** 2, axis=2)
        with np.errstate(divide="ignore", invalid="ignore"):
            t = np.where(var > 0, d / np.sqrt(var), np.where(d > 0, np.inf, np.where(d < 0, -np.inf, 0.0)))
            t_star = np.where(var[:, :, None] > 0, np.abs(dev) / np.sqrt(var)[:, :, None], 0.0)
        t_r = float(np.max(np.abs(t)))
        t_r_star = t_star.reshape(-1, t_star.shape[2]).max(axis=0)
        p = float(np.mean(t_r_star >= t_r)) if t_r > 0 else 1.0
        running = max(running, p)
        worst = alive[int(np.argmax(np.max(t, axis=1)))]
        p_values[names[worst]] = running
        eliminated.append(names[worst])
        alive.remove(worst)
    p_values[names[alive[0]]] = 1.0
    surviving = [nm for nm in names if p_values[nm] >= alpha]
    return McsResult(surviving, p_values, alpha, [e for e in eliminated if p_values[e] < alpha])


# ---------------------------------------------------------------------------
# regimes, FVU, MAD


def stratify_by_regime(index_rv, q: float = 0.9):
    """Boolean masks ``(calm, turbulent)``; calm days are ``<=`` the q-quantile."""
    if not 0 < q < 1:
        raise ValueError("q must lie strictly between 0 and 1")
    x = np.asarray(index_rv, dtype=float)
    threshold = np.quantile(x, q)
    calm = x <= threshold
    return calm, ~calm


def fvu(model_preds, baseline_preds) -> np.ndarray:
    """Per-day unexplained variance fraction; NaN where the model's forecasts are all equal."""
    f = np.asarray(model_preds, dtype=float)
    b = np.asarray(baseline_preds, dtype=float)
    if f.shape != b.shape or f.ndim != 2:
        raise ShapeError("fvu needs (days, assets) matrices of equal shape")
    num = np.sum((f - b) ** 2, axis=1)
    den = np.sum((f - f.mean(axis=1, keepdims=True)) ** 2, axis=1)
    out = np.full(f.shape[0], np.nan)
    ok = den > 0
    out[ok] = num[ok] / den[ok]
    return out


def mad_details(hidden, a):
    """MAD and the number of connected nodes excluded for a zero-norm representation."""
    h = np.asarray(hidden, dtype=float)
    a = check_adjacency(a)
    if h.ndim != 2 or h.shape[0] != a.shape[0]:
        raise ShapeError(f"hidden {h.shape} does not match a {a.shape[0]}-node graph")
    norms = np.sqrt(np.sum(h * h, axis=1))
    connected = a.sum(axis=1) > 0
    bad = connected & (norms == 0)
    ok = norms > 0
    unit = np.zeros_like(h)
    unit[ok] = h[ok] / norms[ok, None]
    dist = 1.0 - unit @ unit.T
    mask = (a > 0) & ok[:, None] & ok[None, :]
    dm = np.where(mask, dist, 0.0)
    pos = dm > 0
    counts = pos.sum(axis=1)
    row_means = np.where(counts > 0, dm.sum(axis=1) / np.maximum(counts, 1), 0.0)
    rows = row_means > 0
    value = float(row_means[rows].mean()) if rows.any() else 0.0
    return value, int(bad.sum())


def mad(hidden, a) -> float:
    """Mean average cosine distance between adjacent node representations."""
    value, excluded = mad_details(hidden, a)
    if excluded:
        warnings.warn(f"MAD: {excluded} connected node(s) with zero representation excluded", RuntimeWarning)
    return value


# ---------------------------------------------------------------------------
# box-plot summaries and coefficient trajectories


def five_number(x) -> tuple:
    """``(median, q1, q3, lower whisker, upper whisker)`` with 1.5 IQR whiskers."""
    x = np.asarray(x, dtype=float).ravel()
    if x.size == 0:
        return (np.nan,) * 5
    q1, med, q3 = np.quantile(x, [0.25, 0.5, 0.75])
    iqr = q3 - q1
    lo = x[x >= q1 - 1.5 * iqr].min()
    hi = x[x <= q3 + 1.5 * iqr].max()
    return float(med), float(q1), float(q3), float(lo), float(hi)


SUMMARY_HEADER = ["model", "horizon", "regime", "quantity", "median", "q1", "q3", "whisker_low", "whisker_high"]


def error_ratio_report(forecasts, panel, regimes: Optional[dict] = None) -> list:
    """Five-number summaries of forecast errors and forecast/realized ratios.

    ``regimes`` maps a regime name to a boolean mask over panel dates; the
    default is a single ``all`` regime.
    """
    rows = []
    for fs in forecasts:
        have, actual = align_actual(fs, panel)
        pred = fs.values[have]
        pos = np.searchsorted(panel.dates, fs.dates[have])
        groups = {"all": np.ones(panel.n_days, bool)} if regimes is None else regimes
        for name, mask in groups.items():
            sel = np.asarray(mask, dtype=bool)[pos]
            err = pred[sel] - actual[sel]
            with np.errstate(divide="ignore", invalid="ignore"):
                ratio = pred[sel] / actual[sel]
            rows.append((fs.model, fs.horizon, name, "error") + five_number(err))
            rows.append((fs.model, fs.horizon, name, "ratio") + five_number(ratio[np.isfinite(ratio)]))
    return rows


def coefficient_names(params_doc: dict) -> dict:
    """Named lag coefficients available in one parameter snapshot dict."""
    out = {}
    blocks = ["beta", "gamma", "delta"] if params_doc["kind"] != "GNNHAR" else ["beta"]
    for block in blocks:
        if block in params_doc:
            for k, lag in enumerate("dwm"):
                out[f"{block}_{lag}"] = params_doc[block]["values"][k]
    return out


TRAJECTORY_HEADER = ["window", "test_month", "model", "horizon", "coefficient", "value"]


def coefficient_trajectory_report(records, coefficients: Optional[Sequence[str]] = None) -> list:
    """Tidy rows of lag coefficients per refit window.

    ``records`` holds ``(window, test_month, model, horizon, [param dicts])``;
    ensemble members are averaged.  Asking for a coefficient a model does
    not have raises.
    """
    rows = []
    for window, month, model, horizon, members in records:
        named = [coefficient_names(p) for p in members]
        wanted = list(named[0]) if coefficients is None else list(coefficients)
        for c in wanted:
            if c not in named[0]:
                raise DataError(f"{model} has no coefficient {c!r}")
            rows.append((window, month, model, horizon, c, float(np.mean([nm[c] for nm in named]))))
    return rows
