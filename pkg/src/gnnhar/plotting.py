"""Static PNG figures for the report bundle.

Every figure is also backed by a CSV in the bundle; these are conveniences.
Each function always writes its file, with a placeholder note when there is
nothing to draw.  PNG output carries no timestamp, so reruns are
byte-identical.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

_META = {"Software": None}


def _empty(path, message: str) -> None:
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.text(0.5, 0.5, message, ha="center", va="center", transform=ax.transAxes)
    ax.set_axis_off()
    _save(fig, path)


def _save(fig, path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=100, metadata=_META)
    plt.close(fig)


def plot_qlike_shape(path, actual: float = 1.0) -> None:
    """QLIKE and squared error against the forecast for a fixed realization."""
    f = np.linspace(0.2, 3.0, 300) * actual
    r = actual / f
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot(f, r - np.log(r) - 1, label="QLIKE")
    ax.plot(f, (f - actual) ** 2, label="squared error", linestyle="--")
    ax.axvline(actual, color="grey", linewidth=0.8)
    ax.set_xlabel("forecast")
    ax.set_ylabel("loss")
    ax.legend()
    fig.tight_layout()
    _save(fig, path)


def plot_box_summaries(path, rows, quantity: str = "error") -> None:
    """Box plots from precomputed five-number summaries."""
    sel = [r for r in rows if r[3] == quantity]
    if not sel:
        _empty(path, f"no forecast {quantity}s")
        return
    stats = [
        {"label": f"{r[0]} h{r[1]} {r[2]}", "med": r[4], "q1": r[5], "q3": r[6], "whislo": r[7], "whishi": r[8]}
        for r in sel
    ]
    fig, ax = plt.subplots(figsize=(max(5, 0.5 * len(stats)), 4))
    ax.bxp(stats, showfliers=False)
    ax.set_ylabel(f"forecast {quantity}")
    ax.tick_params(axis="x", labelrotation=90, labelsize=6)
    fig.tight_layout()
    _save(fig, path)


def plot_trajectories(path, rows, coefficient: str = "beta_d") -> None:
    """Coefficient value per refit window, one line per (model, horizon)."""
    series = {}
    for window, _, model, horizon, coef, value in rows:
        if coef == coefficient:
            series.setdefault(f"{model} h{horizon}", []).append((window, value))
    if not series:
        _empty(path, f"no {coefficient} estimates")
        return
    fig, ax = plt.subplots(figsize=(6, 3.5))
    for label in sorted(series):
        pts = sorted(series[label])
        ax.plot([p[0] for p in pts], [p[1] for p in pts], label=label, linewidth=1)
    ax.set_xlabel("refit window")
    ax.set_ylabel(coefficient)
    ax.legend(fontsize=6)
    fig.tight_layout()
    _save(fig, path)


def plot_fvu(path, fvu_by_model: dict) -> None:
    """Histogram of per-day FVU for each model (missing days dropped)."""
    if not fvu_by_model:
        _empty(path, "no FVU values")
        return
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for model in sorted(fvu_by_model):
        x = np.asarray(fvu_by_model[model], dtype=float)
        x = x[np.isfinite(x)]
        if x.size:
            ax.hist(x, bins=30, histtype="step", label=model)
    ax.set_xlabel("FVU")
    ax.set_ylabel("days")
    ax.legend(fontsize=6)
    fig.tight_layout()
    _save(fig, path)


def plot_mad(path, mad_by_layers: dict) -> None:
    """Distribution of log MAD by GNN depth."""
    items = [(k, np.asarray(v, dtype=float)) for k, v in sorted(mad_by_layers.items())]
    items = [(k, np.log(v[v > 0])) for k, v in items if np.any(v > 0)]
    if not items:
        _empty(path, "no positive MAD values")
        return
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.boxplot([v for _, v in items], showfliers=False)
    ax.set_xticks(range(1, len(items) + 1), [str(k) for k, _ in items])
    ax.set_xlabel("model")
    ax.set_ylabel("log MAD")
    fig.tight_layout()
    _save(fig, path)
