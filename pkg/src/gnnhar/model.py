"""Forward passes for HAR, GHAR, GHAR2Hop and K-layer GNNHAR.

Every forward accepts lag features shaped ``(N, 3)`` for one forecast origin
or ``(B, N, 3)`` for a batch of origins and returns ``(N,)`` / ``(B, N)``.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import ShapeError
from .graph import hop2, k_hop_neighbors, normalize

LINEAR_KINDS = ("HAR", "GHAR", "GHAR2Hop")
DEFAULT_HIDDEN_DIM = 9
N_LAGS = 3


@dataclass
class LinearParams:
    alpha: np.ndarray
    beta: np.ndarray
    gamma: Optional[np.ndarray] = None
    delta: Optional[np.ndarray] = None
    # Regressors that were identically zero in the fit (e.g. an empty Hop2 graph).
    inactive: tuple = ()

    def __post_init__(self):
        self.alpha = np.asarray(self.alpha, dtype=float)
        self.beta = np.asarray(self.beta, dtype=float)
        if self.beta.shape != (N_LAGS,):
            raise ShapeError(f"beta must have shape (3,), got {self.beta.shape}")
        if self.gamma is not None:
            self.gamma = np.asarray(self.gamma, dtype=float)
            if self.gamma.shape != (N_LAGS,):
                raise ShapeError("gamma must have shape (3,)")
        if self.delta is not None:
            if self.gamma is None:
                raise ShapeError("delta requires gamma")
            self.delta = np.asarray(self.delta, dtype=float)
            if self.delta.shape != (N_LAGS,):
                raise ShapeError("delta must have shape (3,)")

    @property
    def kind(self) -> str:
        if self.delta is not None:
            return "GHAR2Hop"
        return "GHAR" if self.gamma is not None else "HAR"

    def coefficients(self) -> np.ndarray:
        blocks = [self.beta] + [b for b in (self.gamma, self.delta) if b is not None]
        return np.concatenate(blocks)


@dataclass
class GnnParams:
    alpha: np.ndarray
    beta: np.ndarray
    layers: list
    gamma: np.ndarray

    def __post_init__(self):
        self.alpha = np.asarray(self.alpha, dtype=float)
        self.beta = np.asarray(self.beta, dtype=float)
        self.layers = [np.asarray(t, dtype=float) for t in self.layers]
        self.gamma = np.asarray(self.gamma, dtype=float)
        if not self.layers:
            raise ShapeError("GNNHAR needs at least one layer")
        d_in = N_LAGS
        for l, theta in enumerate(self.layers):
            if theta.ndim != 2 or theta.shape[0] != d_in:
                raise ShapeError(f"layer {l}: weight shape {theta.shape} does not chain from width {d_in}")
            d_in = theta.shape[1]
        if self.gamma.shape != (d_in,):
            raise ShapeError(f"gamma must have shape ({d_in},), got {self.gamma.shape}")

    @property
    def kind(self) -> str:
        return "GNNHAR"

    @property
    def n_layers(self) -> int:
        return len(self.layers)


@dataclass(frozen=True)
class ModelSpec:
    """Which forecaster to fit and with what estimation criterion.

    ``criterion`` is ``"M"`` (MSE) or ``"Q"`` (QLIKE); ``layers`` only applies
    to GNNHAR.
    """

    kind: str
    criterion: str = "M"
    layers: int = 0
    hidden_dim: int = DEFAULT_HIDDEN_DIM

    def __post_init__(self):
        if self.kind not in LINEAR_KINDS + ("GNNHAR",):
            raise ValueError(f"unknown model kind {self.kind!r}")
        if self.criterion not in ("M", "Q"):
            raise ValueError(f"criterion must be 'M' or 'Q', got {self.criterion!r}")
        if self.kind == "GNNHAR" and self.layers < 1:
            raise ValueError("GNNHAR needs layers >= 1")

    @property
    def is_linear(self) -> bool:
        return self.kind in LINEAR_KINDS

    @property
    def name(self) -> str:
        base = f"GNNHAR{self.layers}L" if self.kind == "GNNHAR" else self.kind
        return f"{base}_{self.criterion}"

    @classmethod
    def parse(cls, name: str, hidden_dim: int = DEFAULT_HIDDEN_DIM) -> "ModelSpec":
        """``"GHAR_M"``, ``"GNNHAR2L_Q"`` ... -> ModelSpec."""
        m = re.fullmatch(r"(HAR|GHAR|GHAR2Hop|GNNHAR(\d+)L)_([MQ])", name)
        if not m:
            raise ValueError(f"cannot parse model name {name!r}")
        if m.group(2):
            return cls("GNNHAR", m.group(3), int(m.group(2)), hidden_dim)
        return cls(m.group(1), m.group(3))


def _features(v) -> np.ndarray:
    v = getattr(v, "matrix", v)
    v = np.asarray(v, dtype=float)
    if v.ndim not in (2, 3) or v.shape[-1] != N_LAGS:
        raise ShapeError(f"lag features must be (N, 3) or (B, N, 3), got {v.shape}")
    return v


def _check_nodes(v, alpha, *ws):
    n = v.shape[-2]
    if alpha.shape != (n,):
        raise ShapeError(f"alpha has shape {alpha.shape}, features have {n} assets")
    for w in ws:
        if np.shape(w) != (n, n):
            raise ShapeError(f"graph operator has shape {np.shape(w)}, expected ({n}, {n})")


def har_forward(v, p: LinearParams) -> np.ndarray:
    v = _features(v)
    if p.gamma is not None or p.delta is not None:
        raise ShapeError("HAR parameters must not carry spillover coefficients")
    _check_nodes(v, p.alpha)
    return p.alpha + v @ p.beta


def ghar_forward(v, w, p: LinearParams) -> np.ndarray:
    v = _features(v)
    if p.gamma is None or p.delta is not None:
        raise ShapeError("GHAR parameters need gamma and no delta")
    _check_nodes(v, p.alpha, w)
    return p.alpha + v @ p.beta + (w @ v) @ p.gamma


def ghar2hop_forward(v, w1, w2, p: LinearParams) -> np.ndarray:
    v = _features(v)
    if p.gamma is None or p.delta is None:
        raise ShapeError("GHAR2Hop parameters need gamma and delta")
    _check_nodes(v, p.alpha, w1, w2)
    return p.alpha + v @ p.beta + (w1 @ v) @ p.gamma + (w2 @ v) @ p.delta


def gnn_layer(h, w, theta) -> np.ndarray:
    """``ReLU(W H Theta)``; no self-connections."""
    h = np.asarray(h, dtype=float)
    theta = np.asarray(theta, dtype=float)
    if h.shape[-1] != theta.shape[0]:
        raise ShapeError(f"hidden width {h.shape[-1]} does not match weight rows {theta.shape[0]}")
    return np.maximum((w @ h) @ theta, 0.0)


def gnn_hidden(v, w, p: GnnParams) -> np.ndarray:
    """Final-layer node representations ``H^(L)``."""
    h = _features(v)
    for theta in p.layers:
        h = gnn_layer(h, w, theta)
    return h


def gnnhar_forward(v, w, p: GnnParams, return_hidden: bool = False):
    v = _features(v)
    _check_nodes(v, p.alpha, w)
    h = gnn_hidden(v, w, p)
    out = p.alpha + v @ p.beta + h @ p.gamma
    return (out, h) if return_hidden else out


@dataclass(frozen=True)
class GraphOperators:
    """Normalized first- and second-hop operators for one adjacency."""

    adjacency: np.ndarray
    w1: np.ndarray = field(repr=False)
    w2: np.ndarray = field(repr=False)

    @classmethod
    def from_adjacency(cls, a) -> "GraphOperators":
        a = np.asarray(a)
        return cls(a, normalize(a), normalize(hop2(a)))


def forecast(params, v, ops: GraphOperators) -> np.ndarray:
    """Dispatch on parameter kind."""
    if isinstance(params, GnnParams):
        return gnnhar_forward(v, ops.w1, params)
    kind = params.kind
    if kind == "HAR":
        return har_forward(v, params)
    if kind == "GHAR":
        return ghar_forward(v, ops.w1, params)
    return ghar2hop_forward(v, ops.w1, ops.w2, params)


def receptive_field_check(p: GnnParams, a, v: int) -> set:
    """Nodes that can influence node ``v``'s GNNHAR output."""
    return k_hop_neighbors(a, v, p.n_layers)


# ---------------------------------------------------------------------------
# parameter snapshots


def params_to_dict(p) -> dict:
    def arr(x):
        return {"shape": list(np.shape(x)), "values": np.ravel(x).tolist()}

    if isinstance(p, GnnParams):
        return {
            "kind": "GNNHAR",
            "n_assets": int(p.alpha.size),
            "alpha": arr(p.alpha),
            "beta": arr(p.beta),
            "layers": [arr(t) for t in p.layers],
            "gamma": arr(p.gamma),
        }
    out = {"kind": p.kind, "n_assets": int(p.alpha.size), "alpha": arr(p.alpha), "beta": arr(p.beta)}
    if p.gamma is not None:
        out["gamma"] = arr(p.gamma)
    if p.delta is not None:
        out["delta"] = arr(p.delta)
    if p.inactive:
        out["inactive"] = list(p.inactive)
    return out


def params_from_dict(d: dict):
    def arr(x):
        return np.array(x["values"], dtype=float).reshape(x["shape"])

    if d["kind"] == "GNNHAR":
        return GnnParams(arr(d["alpha"]), arr(d["beta"]), [arr(t) for t in d["layers"]], arr(d["gamma"]))
    if d["kind"] not in LINEAR_KINDS:
        raise ValueError(f"unknown parameter kind {d['kind']!r}")
    return LinearParams(
        arr(d["alpha"]),
        arr(d["beta"]),
        arr(d["gamma"]) if "gamma" in d else None,
        arr(d["delta"]) if "delta" in d else None,
        tuple(d.get("inactive", ())),
    )


def save_params(p, path, **extra) -> None:
    doc = params_to_dict(p)
    doc.update(extra)
    Path(path).write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")


def load_params(path):
    return params_from_dict(json.loads(Path(path).read_text()))
