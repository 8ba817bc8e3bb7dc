"""Parameter estimation: pooled OLS for linear models, Adam with hand-written
backpropagation for everything else, early stopping and ensembles.

One training sample is one day's full cross-section, so a batch of 32 holds
32 days x N assets.  Adam runs on internally rescaled data (lag features
divided by their training mean, targets by theirs).  Every model here is
positively homogeneous in the features, so the fitted coefficients map back
to original units exactly.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np
from scipy import linalg

from .errors import DataError, DivergedTrainingError, RankDeficientError, ShapeError
from .model import (
    GnnParams,
    GraphOperators,
    LinearParams,
    ModelSpec,
    forecast,
    gnn_hidden,
)

logger = logging.getLogger(__name__)

LAG_NAMES = ("d", "w", "m")


@dataclass(frozen=True)
class EstimationCriterion:
    kind: str = "MSE"
    qlike_floor: float = 1e-8

    def __post_init__(self):
        if self.kind not in ("MSE", "QLIKE"):
            raise ValueError(f"criterion must be MSE or QLIKE, got {self.kind!r}")
        if not self.qlike_floor > 0:
            raise ValueError("qlike_floor must be positive")

    @classmethod
    def from_code(cls, code: str, qlike_floor: float = 1e-8) -> "EstimationCriterion":
        return cls({"M": "MSE", "Q": "QLIKE"}[code], qlike_floor)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size_days: int = 32
    max_epochs: int = 500
    patience_epochs: int = 10
    ensemble_size: int = 10
    seed: int = 0
    hidden_dim_grid: tuple = (3, 6, 9, 16, 32)

    def problems(self) -> list:
        out = []
        if not self.learning_rate > 0:
            out.append("learning_rate: must be positive")
        if self.batch_size_days < 1:
            out.append("batch_size_days: must be >= 1")
        if self.max_epochs < 1:
            out.append("max_epochs: must be >= 1")
        if not 0 <= self.patience_epochs < self.max_epochs:
            out.append("patience_epochs: must be >= 0 and < max_epochs")
        if self.ensemble_size < 1:
            out.append("ensemble_size: must be >= 1")
        if any(int(d) < 1 for d in self.hidden_dim_grid):
            out.append("hidden_dim_grid: dimensions must be >= 1")
        return out


# ---------------------------------------------------------------------------
# losses


def _pair(actual, predicted):
    actual = np.asarray(actual, dtype=float)
    predicted = np.asarray(predicted, dtype=float)
    if actual.shape != predicted.shape:
        raise ShapeError(f"actual {actual.shape} and predicted {predicted.shape} differ in shape")
    return actual, predicted


def mse_loss(actual, predicted) -> float:
    """Mean squared error over all assets and days."""
    actual, predicted = _pair(actual, predicted)
    return float(np.mean((actual - predicted) ** 2))


def qlike_terms(actual, predicted, floor: float = 1e-8) -> np.ndarray:
    actual, predicted = _pair(actual, predicted)
    if np.any(actual <= 0):
        raise DataError("QLIKE needs strictly positive actual values")
    ratio = actual / np.maximum(predicted, floor)
    return ratio - np.log(ratio) - 1.0


def qlike_loss(actual, predicted, floor: float = 1e-8) -> float:
    """Mean QLIKE; predictions are clamped at ``floor`` first."""
    return float(np.mean(qlike_terms(actual, predicted, floor)))


def _loss_and_dpred(y, f, criterion: str, floor: float):
    if criterion == "MSE":
        r = f - y
        return np.mean(r * r), 2.0 * r / r.size
    p = np.maximum(f, floor)
    ratio = y / p
    loss = np.mean(ratio - np.log(ratio) - 1.0)
    g = np.where(f > floor, (1.0 - ratio) / p, 0.0) / y.size
    return loss, g


# ---------------------------------------------------------------------------
# OLS


def linear_design(v, ops: Optional[GraphOperators], kind: str) -> np.ndarray:
    """Stack ``[V, W1 V, W2 V]`` as needed, shape ``(..., N, 3k)``."""
    v = np.asarray(v, dtype=float)
    blocks = [v]
    if kind in ("GHAR", "GHAR2Hop"):
        blocks.append(ops.w1 @ v)
    if kind == "GHAR2Hop":
        blocks.append(ops.w2 @ v)
    return np.concatenate(blocks, axis=-1)


def _coef_names(kind, assets):
    names = [f"alpha[{a}]" for a in assets]
    for prefix, kinds in (("beta", LINEAR_KINDS_ALL), ("gamma", ("GHAR", "GHAR2Hop")), ("delta", ("GHAR2Hop",))):
        if kind in kinds:
            names += [f"{prefix}_{s}" for s in LAG_NAMES]
    return names


LINEAR_KINDS_ALL = ("HAR", "GHAR", "GHAR2Hop")


def ols_fit(v, y, kind: str = "HAR", ops: Optional[GraphOperators] = None, assets: Optional[Sequence] = None) -> LinearParams:
    """Pooled least squares with per-asset intercepts and shared lag slopes.

    ``v`` is ``(T, N, 3)``, ``y`` is ``(T, N)``.  Solved by column-pivoted QR
    on a column-normalized design.  Regressors that are identically zero
    (e.g. spillover columns of an empty graph) are fixed at 0 and reported
    in ``LinearParams.inactive``; any other collinearity raises.
    """
    v = np.asarray(v, dtype=float)
    y = np.asarray(y, dtype=float)
    if v.ndim != 3 or y.shape != v.shape[:2]:
        raise ShapeError(f"features {v.shape} and targets {y.shape} are not (T, N, 3) / (T, N)")
    t, n, _ = v.shape
    assets = list(assets) if assets is not None else [str(i) for i in range(n)]
    lag = linear_design(v, ops, kind).reshape(t * n, -1)
    dummies = np.tile(np.eye(n), (t, 1))
    x = np.hstack([dummies, lag])
    names = _coef_names(kind, assets)
    norms = np.sqrt(np.sum(x * x, axis=0))
    zero = norms == 0
    inactive = tuple(names[k] for k in np.flatnonzero(zero))
    if any(nm.startswith("alpha") for nm in inactive):
        raise RankDeficientError("an asset has no observations", columns=inactive)
    keep = np.flatnonzero(~zero)
    xs = x[:, keep] / norms[keep]
    q, r, piv = linalg.qr(xs, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r))
    tol = max(xs.shape) * np.finfo(float).eps * diag[0]
    rank = int(np.sum(diag > tol))
    if rank < keep.size:
        cols = [names[keep[k]] for k in piv[rank:]]
        raise RankDeficientError(f"design is rank deficient; collinear columns: {', '.join(cols)}", columns=cols)
    z = linalg.solve_triangular(r, q.T @ y.reshape(-1))
    coef = np.zeros(x.shape[1])
    coef[keep[piv]] = z / norms[keep[piv]]
    alpha, slopes = coef[:n], coef[n:]
    return LinearParams(
        alpha,
        slopes[:3],
        slopes[3:6] if kind in ("GHAR", "GHAR2Hop") else None,
        slopes[6:9] if kind == "GHAR2Hop" else None,
        inactive=inactive,
    )


# ---------------------------------------------------------------------------
# flat parameter lists and backpropagation


def to_arrays(params) -> list:
    if isinstance(params, GnnParams):
        return [params.alpha.copy(), params.beta.copy()] + [t.copy() for t in params.layers] + [params.gamma.copy()]
    return [params.alpha.copy(), params.coefficients().copy()]


def from_arrays(spec: ModelSpec, arrays, inactive=()):
    if spec.kind == "GNNHAR":
        return GnnParams(arrays[0].copy(), arrays[1].copy(), [a.copy() for a in arrays[2:-1]], arrays[-1].copy())
    c = arrays[1]
    return LinearParams(
        arrays[0].copy(),
        c[:3].copy(),
        c[3:6].copy() if spec.kind in ("GHAR", "GHAR2Hop") else None,
        c[6:9].copy() if spec.kind == "GHAR2Hop" else None,
        inactive=tuple(inactive),
    )


class Objective:
    """Loss and exact gradient of one model over a fixed set of days."""

    def __init__(self, spec: ModelSpec, v, y, ops: GraphOperators, criterion: EstimationCriterion, floor=None):
        self.spec = spec
        self.criterion = criterion.kind
        self.floor = criterion.qlike_floor if floor is None else floor
        self.v = np.asarray(v, dtype=float)
        self.y = np.asarray(y, dtype=float)
        if self.criterion == "QLIKE" and np.any(self.y <= 0):
            raise DataError("QLIKE training needs strictly positive targets")
        self.w = ops.w1
        if spec.is_linear:
            self.x = linear_design(self.v, ops, spec.kind)
        else:
            self.wv = self.w @ self.v

    def predict(self, arrays, idx=None, return_cache=False):
        sl = slice(None) if idx is None else idx
        if self.spec.is_linear:
            x = self.x[sl]
            f = arrays[0] + x @ arrays[1]
            return (f, None) if return_cache else f
        v = self.v[sl]
        thetas = arrays[2:-1]
        pre, hs = [], [v]
        p = self.wv[sl]
        for l, theta in enumerate(thetas):
            if l > 0:
                p = self.w @ hs[-1]
            z = p @ theta
            pre.append((p, z))
            hs.append(np.maximum(z, 0.0))
        f = arrays[0] + v @ arrays[1] + hs[-1] @ arrays[-1]
        return (f, (pre, hs)) if return_cache else f

    def loss(self, arrays, idx=None) -> float:
        f = self.predict(arrays, idx)
        y = self.y if idx is None else self.y[idx]
        return float(_loss_and_dpred(y, f, self.criterion, self.floor)[0])

    def loss_and_grad(self, arrays, idx=None):
        f, cache = self.predict(arrays, idx, return_cache=True)
        y = self.y if idx is None else self.y[idx]
        loss, g = _loss_and_dpred(y, f, self.criterion, self.floor)
        d_alpha = g.reshape(-1, g.shape[-1]).sum(axis=0)
        if self.spec.is_linear:
            x = self.x if idx is None else self.x[idx]
            d_coef = np.einsum("bnk,bn->k", x, g)
            return float(loss), [d_alpha, d_coef]
        v = self.v if idx is None else self.v[idx]
        pre, hs = cache
        thetas = arrays[2:-1]
        gamma = arrays[-1]
        d_beta = np.einsum("bnk,bn->k", v, g)
        d_gamma = np.einsum("bnk,bn->k", hs[-1], g)
        dh = g[..., None] * gamma
        d_thetas = [None] * len(thetas)
        for l in range(len(thetas) - 1, -1, -1):
            p, z = pre[l]
            dz = dh * (z > 0)
            d_thetas[l] = np.einsum("bni,bnj->ij", p, dz)
            if l > 0:
                dh = self.w.T @ (dz @ thetas[l].T)
        return float(loss), [d_alpha, d_beta] + d_thetas + [d_gamma]


def loss_and_grad(spec: ModelSpec, params, v, y, ops: GraphOperators, criterion: EstimationCriterion):
    """Convenience wrapper returning ``(loss, gradient arrays)`` in the layout of :func:`to_arrays`."""
    return Objective(spec, v, y, ops, criterion).loss_and_grad(to_arrays(params))


class Adam:
    def __init__(self, params, lr=1e-3, b1=0.9, b2=0.999, eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, b1, b2, eps
        self.t = 0
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]

    def step(self, params, grads):
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


# ---------------------------------------------------------------------------
# Adam training


@dataclass(frozen=True)
class TrainingData:
    """Lag features ``(T, N, 3)``, targets ``(T, N)`` and the graph."""

    v: np.ndarray
    y: np.ndarray
    ops: GraphOperators

    def __post_init__(self):
        if self.v.ndim != 3 or self.y.shape != self.v.shape[:2]:
            raise ShapeError(f"features {self.v.shape} / targets {self.y.shape} misaligned")


@dataclass
class FittedModel:
    spec: ModelSpec
    params: object
    criterion: EstimationCriterion
    training_curve: np.ndarray = field(repr=False)
    member_id: int = 0
    best_epoch: int = 0

    def predict(self, v, ops: GraphOperators) -> np.ndarray:
        return forecast(self.params, v, ops)


OUTPUT_INIT_SCALE = 0.1


def init_arrays(spec: ModelSpec, n_assets: int, rng: np.random.Generator, y_mean=1.0) -> list:
    """Starting point on the rescaled problem.

    Lag slopes start at 0.33 each; intercepts at the part of the target mean
    those slopes leave unexplained; GNN weights uniform in +-1/sqrt(fan_in).
    Spillover slopes and the GNN output weights start small (scale
    ``OUTPUT_INIT_SCALE``) so the first forecasts stay near the positive
    own-lag fit and QLIKE does not start with clamped predictions.
    """
    beta = np.full(3, 0.33)
    alpha = np.broadcast_to(np.asarray(y_mean, dtype=float) * (1.0 - beta.sum()), (n_assets,)).copy()
    if spec.is_linear:
        k = {"HAR": 0, "GHAR": 1, "GHAR2Hop": 2}[spec.kind]
        coef = np.concatenate([beta] + [OUTPUT_INIT_SCALE * rng.uniform(-1, 1, 3) / np.sqrt(3) for _ in range(k)])
        return [alpha, coef]
    dims = [3] + [spec.hidden_dim] * spec.layers
    thetas = [rng.uniform(-1, 1, (a, b)) / np.sqrt(a) for a, b in zip(dims[:-1], dims[1:])]
    gamma = OUTPUT_INIT_SCALE * rng.uniform(-1, 1, dims[-1]) / np.sqrt(dims[-1])
    return [alpha, beta] + thetas + [gamma]


def _unscale(spec, arrays, s_v, s_y):
    out = [a.copy() for a in arrays]
    out[0] *= s_y
    ratio = s_y / s_v
    if spec.is_linear:
        out[1] *= ratio
    else:
        out[1] *= ratio
        out[-1] *= ratio
    return out


def adam_fit(spec: ModelSpec, data: TrainingData, split, criterion: EstimationCriterion,
             cfg: TrainConfig, member_id: int = 0, seed: Optional[int] = None,
             max_epochs: Optional[int] = None) -> FittedModel:
    """Mini-batch Adam with early stopping on the validation days.

    ``split`` is ``(train_days, validation_days)`` as index arrays; pass
    ``None`` for validation to train a fixed ``max_epochs`` budget and keep
    the last iterate.  Returns the snapshot from the best validation epoch.
    """
    train_idx = np.asarray(split[0], dtype=int)
    val_idx = None if split[1] is None else np.asarray(split[1], dtype=int)
    if train_idx.size == 0:
        raise DataError("empty training split")
    if val_idx is not None:
        if val_idx.size == 0:
            raise DataError("empty validation split")
        if np.intersect1d(train_idx, val_idx).size:
            raise DataError("training and validation days overlap")
    seed = cfg.seed + member_id if seed is None else seed
    rng = np.random.default_rng(seed)
    epochs = cfg.max_epochs if max_epochs is None else max_epochs

    s_v = float(np.mean(data.v[train_idx]))
    s_y = float(np.mean(data.y[train_idx]))
    if not (s_v > 0 and s_y > 0):
        raise DataError("training features and targets must have positive means")
    v_s = data.v / s_v
    y_s = data.y / s_y
    obj = Objective(spec, v_s, y_s, data.ops, criterion, floor=criterion.qlike_floor / s_y)
    loss_unit = s_y ** 2 if criterion.kind == "MSE" else 1.0

    arrays = init_arrays(spec, data.v.shape[1], rng, y_mean=y_s[train_idx].mean(axis=0))
    opt = Adam(arrays, lr=cfg.learning_rate)
    best = (np.inf, 0, [a.copy() for a in arrays])
    curve = []
    since_best = 0
    step = 0
    for epoch in range(1, epochs + 1):
        order = rng.permutation(train_idx)
        for start in range(0, order.size, cfg.batch_size_days):
            batch = order[start:start + cfg.batch_size_days]
            loss, grads = obj.loss_and_grad(arrays, batch)
            step += 1
            if not np.isfinite(loss) or not all(np.all(np.isfinite(g)) for g in grads):
                raise DivergedTrainingError(
                    f"{spec.name}: non-finite loss at epoch {epoch}, step {step}", epoch=epoch, step=step
                )
            opt.step(arrays, grads)
        train_loss = obj.loss(arrays, train_idx) * loss_unit
        if not np.isfinite(train_loss):
            raise DivergedTrainingError(f"{spec.name}: non-finite training loss at epoch {epoch}", epoch=epoch, step=step)
        if val_idx is None:
            curve.append((epoch, train_loss, np.nan))
            best = (np.nan, epoch, arrays)
            continue
        val_loss = obj.loss(arrays, val_idx) * loss_unit
        curve.append((epoch, train_loss, val_loss))
        if val_loss < best[0]:
            best = (val_loss, epoch, [a.copy() for a in arrays])
            since_best = 0
        else:
            since_best += 1
            if since_best >= cfg.patience_epochs:
                break
    _, best_epoch, best_arrays = best
    params = from_arrays(spec, _unscale(spec, best_arrays, s_v, s_y))
    return FittedModel(spec, params, criterion, np.array(curve), member_id, best_epoch)


# ---------------------------------------------------------------------------
# ensembles


@dataclass
class Ensemble:
    spec: ModelSpec
    members: list

    def predict(self, v, ops: GraphOperators) -> np.ndarray:
        total = None
        for m in self.members:
            f = m.predict(v, ops)
            total = f if total is None else total + f
        return total / len(self.members)

    def hidden(self, v, ops: GraphOperators) -> np.ndarray:
        """Member-averaged final GNN representations."""
        if self.spec.kind != "GNNHAR":
            raise ValueError(f"{self.spec.name} has no hidden representations")
        total = None
        for m in self.members:
            h = gnn_hidden(v, ops.w1, m.params)
            total = h if total is None else total + h
        return total / len(self.members)

    @property
    def best_epochs(self) -> list:
        return [m.best_epoch for m in self.members]


def ensemble_fit(spec: ModelSpec, data: TrainingData, split, criterion: EstimationCriterion,
                 cfg: TrainConfig, seed_offset: int = 0) -> Ensemble:
    """``cfg.ensemble_size`` members seeded ``seed, seed+1, ...``; forecasts are averaged."""
    members = [
        adam_fit(spec, data, split, criterion, cfg, member_id=k, seed=cfg.seed + seed_offset + k)
        for k in range(cfg.ensemble_size)
    ]
    return Ensemble(spec, members)


def full_sample_fit(spec: ModelSpec, data: TrainingData, split, criterion: EstimationCriterion,
                    cfg: TrainConfig, full_days=None) -> Ensemble:
    """Adam on training plus validation days with a fixed epoch budget.

    The budget is the median best epoch of a preliminary early-stopped run on
    ``split``; used for QLIKE-trained linear models, which have nothing to tune.
    ``full_days`` defaults to the union of the two split ranges.
    """
    prelim = ensemble_fit(spec, data, split, criterion, cfg)
    budget = max(1, int(np.median(prelim.best_epochs)))
    days = np.union1d(split[0], split[1]) if full_days is None else np.asarray(full_days, dtype=int)
    members = [
        adam_fit(spec, data, (days, None), criterion, cfg, member_id=k, seed=cfg.seed + k, max_epochs=budget)
        for k in range(cfg.ensemble_size)
    ]
    return Ensemble(spec, members)


def grid_search_hidden_dim(spec: ModelSpec, data: TrainingData, split, criterion: EstimationCriterion,
                           cfg: TrainConfig):
    """Pick the hidden width with the lowest mean best-validation loss.

    Returns ``(best_dim, {dim: mean validation loss})``.
    """
    grid = [int(d) for d in cfg.hidden_dim_grid]
    if not grid:
        raise ValueError("hidden_dim_grid is empty")
    if spec.kind != "GNNHAR":
        raise ValueError("hidden-dimension search applies to GNNHAR only")
    table = {}
    for d in grid:
        ens = ensemble_fit(replace(spec, hidden_dim=d), data, split, criterion, cfg)
        table[d] = float(np.mean([np.nanmin(m.training_curve[:, 2]) for m in ens.members]))
    best = min(grid, key=lambda d: (table[d], d))
    return best, table
