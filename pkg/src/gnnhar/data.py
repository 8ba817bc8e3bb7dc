"""Realized-volatility panels: estimation from intraday prices, HAR lag
features, multi-horizon targets and the CSV formats used on disk.

Values are kept in raw squared-log-return units everywhere in this module;
the x1e4 presentation scaling happens only when reports are rendered.
"""

from __future__ import annotations

import csv
import logging
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    DataError,
    EmptyTargetError,
    InsufficientDataError,
    InsufficientHistoryError,
    ParseError,
    ShapeError,
)

logger = logging.getLogger(__name__)

# Number of prior days consumed by one HAR feature row.
LAG_WINDOW = 22
DAILY_LAG, WEEKLY_SPAN, MONTHLY_SPAN = 1, (2, 5), (6, 22)

RV_HEADER = ["date", "asset", "rv"]
INTRADAY_HEADER = ["date", "asset", "minute", "price"]
INDEX_HEADER = ["date", "rv"]
RETURNS_HEADER = ["date", "asset", "ret"]


@dataclass(frozen=True)
class IntradaySeries:
    asset: str
    day: np.datetime64
    minutes: np.ndarray
    prices: np.ndarray

    def __post_init__(self):
        minutes = np.asarray(self.minutes, dtype=float)
        prices = np.asarray(self.prices, dtype=float)
        if minutes.shape != prices.shape or minutes.ndim != 1:
            raise ShapeError(f"{self.asset} {self.day}: minutes and prices must be 1-d and equal length")
        if minutes.size < 2:
            raise InsufficientDataError(f"{self.asset} {self.day}: need at least 2 observations")
        if np.any(np.diff(minutes) <= 0):
            raise DataError(f"{self.asset} {self.day}: observation times must be strictly increasing")
        if not np.all(np.isfinite(prices)) or np.any(prices <= 0):
            raise DataError(f"{self.asset} {self.day}: prices must be finite and positive")
        object.__setattr__(self, "minutes", minutes)
        object.__setattr__(self, "prices", prices)
        object.__setattr__(self, "day", np.datetime64(self.day, "D"))


@dataclass(frozen=True)
class RvPanel:
    """T x N matrix of daily realized volatilities."""

    dates: np.ndarray
    assets: tuple
    values: np.ndarray

    def __post_init__(self):
        dates = np.asarray(self.dates, dtype="datetime64[D]")
        values = np.array(self.values, dtype=float)
        assets = tuple(str(a) for a in self.assets)
        if values.ndim != 2 or values.shape != (dates.size, len(assets)):
            raise ShapeError(f"values shape {values.shape} does not match {dates.size} dates x {len(assets)} assets")
        if len(set(assets)) != len(assets):
            raise DataError("duplicate asset symbols")
        if dates.size > 1 and np.any(np.diff(dates) <= np.timedelta64(0, "D")):
            raise DataError("dates must be strictly increasing")
        if not np.all(np.isfinite(values)):
            raise DataError("panel contains missing or non-finite cells")
        if np.any(values < 0):
            raise DataError("realized volatility must be nonnegative")
        values.setflags(write=False)
        dates.setflags(write=False)
        object.__setattr__(self, "dates", dates)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "assets", assets)

    @property
    def n_days(self) -> int:
        return self.values.shape[0]

    @property
    def n_assets(self) -> int:
        return self.values.shape[1]

    def scaled(self, a: float) -> "RvPanel":
        return RvPanel(self.dates, self.assets, self.values * a)

    def truncate(self, stop: int) -> "RvPanel":
        """Panel restricted to rows ``[0, stop)``."""
        return RvPanel(self.dates[:stop], self.assets, self.values[:stop])


@dataclass(frozen=True)
class LagFeatures:
    origin: int
    matrix: np.ndarray


@dataclass(frozen=True)
class TargetPanel:
    horizon: int
    dates: np.ndarray
    values: np.ndarray = field(repr=False)


# ---------------------------------------------------------------------------
# realized volatility


def _last_tick(minutes, prices, grid):
    idx = np.searchsorted(minutes, grid, side="right") - 1
    return prices[idx]


def compute_daily_rv(series: IntradaySeries, delta_minutes: int = 5, base_minutes: int = 1) -> float:
    """Subsample-averaged realized variance for one asset-day.

    For each offset ``s`` in ``0 .. delta/base - 1`` prices are sampled on the
    ``delta``-minute grid starting at ``s * base`` (last tick at or before each
    grid time), squared log returns are summed, and the offsets are averaged.
    ``base_minutes == delta_minutes`` gives the plain non-overlapping estimator.
    """
    if delta_minutes <= 0 or base_minutes <= 0 or delta_minutes % base_minutes:
        raise DataError(f"delta_minutes={delta_minutes} must be a positive multiple of base_minutes={base_minutes}")
    minutes, prices = series.minutes, series.prices
    if minutes[-1] - minutes[0] < delta_minutes:
        raise InsufficientDataError(
            f"{series.asset} {series.day}: observations span {minutes[-1] - minutes[0]:g} min < delta {delta_minutes}"
        )
    log_p = np.log(prices)
    n_offsets = delta_minutes // base_minutes
    total = 0.0
    for s in range(n_offsets):
        grid = np.arange(s * base_minutes, minutes[-1] + 1e-9, delta_minutes, dtype=float)
        grid = grid[grid >= minutes[0]]
        if grid.size < 2:
            raise InsufficientDataError(
                f"{series.asset} {series.day}: fewer than two grid points at offset {s * base_minutes} min"
            )
        r = np.diff(_last_tick(minutes, log_p, grid))
        total += float(np.dot(r, r))
    return total / n_offsets


def compute_rv_panel(series: Iterable[IntradaySeries], delta_minutes: int = 5, base_minutes: int = 1,
                     on_missing: str = "drop") -> RvPanel:
    """RV for every asset-day. Dates missing for any asset are dropped
    (``on_missing="drop"``) or rejected (``"error"``)."""
    cells = {}
    for s in series:
        key = (s.day, s.asset)
        if key in cells:
            raise DataError(f"duplicate intraday series for {s.asset} on {s.day}")
        cells[key] = compute_daily_rv(s, delta_minutes, base_minutes)
    return _assemble_panel(cells, on_missing, source="intraday series")


def _assemble_panel(cells, on_missing, source):
    if not cells:
        raise DataError(f"{source}: no observations")
    dates = np.array(sorted({d for d, _ in cells}), dtype="datetime64[D]")
    assets = sorted({a for _, a in cells})
    complete = [d for d in dates if all((d, a) in cells for a in assets)]
    if len(complete) < len(dates):
        gaps = [(str(d), a) for d in dates for a in assets if (d, a) not in cells]
        if on_missing == "error":
            shown = ", ".join(f"{d}/{a}" for d, a in gaps[:10])
            more = f" (+{len(gaps) - 10} more)" if len(gaps) > 10 else ""
            raise DataError(f"{source}: panel has holes at date/asset {shown}{more}")
        logger.warning("%s: dropping %d incomplete dates", source, len(dates) - len(complete))
    values = np.array([[cells[(d, a)] for a in assets] for d in complete], dtype=float).reshape(len(complete), len(assets))
    return RvPanel(np.array(complete, dtype="datetime64[D]"), tuple(assets), values)


# ---------------------------------------------------------------------------
# features and targets


def _lag_columns(values: np.ndarray, origins: np.ndarray) -> np.ndarray:
    # Fixed left-to-right summation so single-origin and batched calls agree bitwise.
    daily = values[origins - DAILY_LAG]
    weekly = values[origins - WEEKLY_SPAN[0]].copy()
    for k in range(WEEKLY_SPAN[0] + 1, WEEKLY_SPAN[1] + 1):
        weekly += values[origins - k]
    monthly = values[origins - MONTHLY_SPAN[0]].copy()
    for k in range(MONTHLY_SPAN[0] + 1, MONTHLY_SPAN[1] + 1):
        monthly += values[origins - k]
    weekly /= WEEKLY_SPAN[1] - WEEKLY_SPAN[0] + 1
    monthly /= MONTHLY_SPAN[1] - MONTHLY_SPAN[0] + 1
    return np.stack([daily, weekly, monthly], axis=-1)


def build_lag_features(panel: RvPanel, t: int) -> LagFeatures:
    """HAR regressors for forecast origin ``t`` (uses rows ``t-22 .. t-1``)."""
    if t < LAG_WINDOW:
        raise InsufficientHistoryError(f"origin {t} needs {LAG_WINDOW} prior days")
    if t > panel.n_days:
        raise InsufficientHistoryError(f"origin {t} beyond panel end {panel.n_days}")
    m = _lag_columns(np.asarray(panel.values), np.array([t]))[0]
    return LagFeatures(origin=t, matrix=m)


def lag_feature_tensor(values: np.ndarray, origins=None) -> np.ndarray:
    """Stacked lag features, shape ``(len(origins), N, 3)``.

    ``origins`` defaults to every valid origin ``22 .. T`` inclusive, the last
    one being the out-of-panel next-day forecast.
    """
    values = np.asarray(values, dtype=float)
    if origins is None:
        origins = np.arange(LAG_WINDOW, values.shape[0] + 1)
    origins = np.asarray(origins, dtype=int)
    if origins.size and (origins.min() < LAG_WINDOW or origins.max() > values.shape[0]):
        raise InsufficientHistoryError(f"origins must lie in [{LAG_WINDOW}, {values.shape[0]}]")
    return _lag_columns(values, origins)


def horizon_sum(values: np.ndarray, h: int) -> np.ndarray:
    values = np.asarray(values, dtype=float)
    n = values.shape[0] - h
    out = values[:n].copy()
    for k in range(1, h + 1):
        out += values[k:k + n]
    return out


def build_horizon_targets(panel: RvPanel, h: int) -> TargetPanel:
    """Row ``t`` holds ``RV_t + ... + RV_{t+h}``; the last ``h`` rows are dropped."""
    if h < 0:
        raise EmptyTargetError(f"horizon must be nonnegative, got {h}")
    if h >= panel.n_days:
        raise EmptyTargetError(f"horizon {h} leaves no targets in a {panel.n_days}-day panel")
    return TargetPanel(horizon=h, dates=panel.dates[: panel.n_days - h], values=horizon_sum(panel.values, h))


# ---------------------------------------------------------------------------
# CSV I/O


def _open_rows(path, header):
    path = Path(path)
    if not path.exists():
        raise DataError(f"input file not found: {path}")
    fh = path.open(newline="")
    reader = csv.reader(fh)
    try:
        first = next(reader)
    except StopIteration:
        fh.close()
        raise ParseError(path, 1, "header", "empty file")
    if [c.strip() for c in first] != header:
        fh.close()
        raise ParseError(path, 1, "header", f"expected {','.join(header)}, got {','.join(first)}")
    return fh, reader


def _parse_date(path, line, text):
    try:
        return np.datetime64(text.strip(), "D")
    except ValueError:
        raise ParseError(path, line, "date", f"not an ISO-8601 date: {text!r}")


def _parse_float(path, line, name, text, nonneg=True, positive=False):
    try:
        x = float(text)
    except ValueError:
        raise ParseError(path, line, name, f"not a number: {text!r}")
    if not np.isfinite(x):
        raise ParseError(path, line, name, "NaN or infinite value")
    if positive and x <= 0:
        raise ParseError(path, line, name, f"must be positive, got {x}")
    if nonneg and x < 0:
        raise ParseError(path, line, name, f"must be nonnegative, got {x}")
    return x


def _read_long(path, header, value_name, nonneg):
    fh, reader = _open_rows(path, header)
    cells = {}
    with fh:
        for line, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 3:
                raise ParseError(path, line, "row", f"expected 3 fields, got {len(row)}")
            d = _parse_date(path, line, row[0])
            asset = row[1].strip()
            if not asset:
                raise ParseError(path, line, "asset", "empty symbol")
            if (d, asset) in cells:
                raise ParseError(path, line, "date,asset", f"duplicate key ({d}, {asset})")
            cells[(d, asset)] = _parse_float(path, line, value_name, row[2], nonneg=nonneg)
    return cells


def load_rv_panel(path, on_missing: str = "error") -> RvPanel:
    """Read a ``date,asset,rv`` file into a rectangular panel."""
    cells = _read_long(path, RV_HEADER, "rv", nonneg=True)
    return _assemble_panel(cells, on_missing, source=str(path))


def load_returns(path, panel: RvPanel | None = None) -> np.ndarray | tuple:
    """Read a ``date,asset,ret`` file. Aligned to ``panel`` when one is given,
    otherwise returned as ``(dates, assets, matrix)``."""
    cells = _read_long(path, RETURNS_HEADER, "ret", nonneg=False)
    if panel is None:
        dates = np.array(sorted({d for d, _ in cells}), dtype="datetime64[D]")
        assets = tuple(sorted({a for _, a in cells}))
        missing = [(d, a) for d in dates for a in assets if (d, a) not in cells]
        if missing:
            raise DataError(f"{path}: returns have holes, e.g. {missing[0][0]}/{missing[0][1]}")
        return dates, assets, np.array([[cells[(d, a)] for a in assets] for d in dates])
    out = np.empty(panel.values.shape)
    for i, d in enumerate(panel.dates):
        for j, a in enumerate(panel.assets):
            try:
                out[i, j] = cells[(d, a)]
            except KeyError:
                raise DataError(f"{path}: no return for {d}/{a} present in the RV panel")
    return out


def load_intraday(path) -> list:
    fh, reader = _open_rows(path, INTRADAY_HEADER)
    grouped = defaultdict(list)
    with fh:
        for line, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 4:
                raise ParseError(path, line, "row", f"expected 4 fields, got {len(row)}")
            d = _parse_date(path, line, row[0])
            asset = row[1].strip()
            try:
                minute = int(row[2])
            except ValueError:
                raise ParseError(path, line, "minute", f"not an integer: {row[2]!r}")
            if minute < 0:
                raise ParseError(path, line, "minute", "must be nonnegative")
            price = _parse_float(path, line, "price", row[3], positive=True)
            grouped[(d, asset)].append((minute, price, line))
    out = []
    for (d, asset), obs in sorted(grouped.items()):
        obs.sort()
        for (m0, _, _), (m1, _, line) in zip(obs, obs[1:]):
            if m1 == m0:
                raise ParseError(path, line, "minute", f"duplicate minute {m1} for {asset} on {d}")
        if len(obs) < 2:
            raise ParseError(path, obs[0][2], "minute", f"{asset} on {d} has fewer than 2 observations")
        out.append(IntradaySeries(asset, d, [o[0] for o in obs], [o[1] for o in obs]))
    return out


def daily_returns_from_intraday(series: Sequence[IntradaySeries], panel: RvPanel) -> np.ndarray:
    """Close-to-close log returns aligned to ``panel``; the first day's return
    is open-to-close since no previous close exists."""
    closes = {(s.day, s.asset): (s.prices[0], s.prices[-1]) for s in series}
    out = np.empty(panel.values.shape)
    for j, a in enumerate(panel.assets):
        prev = None
        for i, d in enumerate(panel.dates):
            open_, close = closes[(d, a)]
            out[i, j] = np.log(close / (open_ if prev is None else prev))
            prev = close
    return out


def load_index_rv(path):
    """Read a ``date,rv`` file; returns ``(dates, values)``."""
    fh, reader = _open_rows(path, INDEX_HEADER)
    dates, vals = [], []
    seen = set()
    with fh:
        for line, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 2:
                raise ParseError(path, line, "row", f"expected 2 fields, got {len(row)}")
            d = _parse_date(path, line, row[0])
            if d in seen:
                raise ParseError(path, line, "date", f"duplicate date {d}")
            seen.add(d)
            dates.append(d)
            vals.append(_parse_float(path, line, "rv", row[1]))
    order = np.argsort(np.array(dates, dtype="datetime64[D]"), kind="stable")
    return np.array(dates, dtype="datetime64[D]")[order], np.array(vals)[order]


def _fmt(x: float) -> str:
    return repr(float(x))


def write_rv_panel(panel: RvPanel, path) -> None:
    _write_long(path, RV_HEADER, panel.dates, panel.assets, panel.values)


def write_returns(dates, assets, returns, path) -> None:
    _write_long(path, RETURNS_HEADER, dates, assets, returns)


def _write_long(path, header, dates, assets, values):
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for i, d in enumerate(dates):
            for j, a in enumerate(assets):
                w.writerow([str(d), a, _fmt(values[i, j])])


def write_index_rv(dates, values, path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(INDEX_HEADER)
        for d, v in zip(dates, values):
            w.writerow([str(d), _fmt(v)])
