"""Synthetic RV panels with a known spillover graph, for oracle tests.

By default log-RV follows a graph HAR recursion on its own daily/weekly/monthly
lags, optionally plus a one-layer ``relu(W V Theta) gamma`` term, plus Gaussian
noise.  With ``space="level"`` the same recursion gives the conditional mean
of RV itself, which is multiplied by mean-one lognormal noise; the
forecasting models are then correctly specified.  Returns are
``sqrt(RV_t) * z_t`` with ``z_t`` drawn from a Gaussian whose precision
matrix has exactly the support of the graph.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .data import LAG_WINDOW, RvPanel
from .errors import ShapeError, UnstableDGPError
from .graph import check_adjacency, normalize
from .model import GnnParams, LinearParams

# lag weights of the daily, weekly and monthly HAR components
_LAG_WEIGHTS = np.zeros((3, LAG_WINDOW))
_LAG_WEIGHTS[0, 0] = 1.0
_LAG_WEIGHTS[1, 1:5] = 1.0 / 4
_LAG_WEIGHTS[2, 5:22] = 1.0 / 17


@dataclass(frozen=True)
class SyntheticPanel:
    panel: RvPanel
    returns: np.ndarray
    index_rv: np.ndarray
    precision: np.ndarray
    log_rv: np.ndarray


def business_days(start: str, n: int) -> np.ndarray:
    """``n`` consecutive Monday-to-Friday dates from ``start`` (inclusive if a weekday)."""
    first = np.busday_offset(np.datetime64(start, "D"), 0, roll="forward")
    return np.busday_offset(first, np.arange(n), roll="forward")


def _split(coefficients):
    """(alpha, beta, gamma, [thetas], gnn_gamma) from a parameter container."""
    if isinstance(coefficients, GnnParams):
        if coefficients.n_layers != 1:
            raise ShapeError("the synthetic DGP supports one nonlinear layer only")
        return coefficients.alpha, coefficients.beta, np.zeros(3), coefficients.layers[0], coefficients.gamma
    if isinstance(coefficients, LinearParams):
        if coefficients.delta is not None:
            raise ShapeError("the synthetic DGP has no second-hop term")
        g = np.zeros(3) if coefficients.gamma is None else coefficients.gamma
        return coefficients.alpha, coefficients.beta, g, None, None
    raise TypeError(f"unsupported coefficient container {type(coefficients).__name__}")


def _lag_polynomial(beta):
    return beta @ _LAG_WEIGHTS


def spectral_radius(beta, gamma, w) -> float:
    """Largest companion-matrix eigenvalue modulus of the linear recursion.

    ``W`` is symmetric, so the N-variate system splits into one scalar
    22-lag recursion per eigenvalue ``lam`` with lag coefficients from
    ``beta + lam * gamma``.
    """
    lams = np.linalg.eigvalsh(w) if np.size(w) else np.zeros(0)
    worst = 0.0
    for lam in np.unique(np.round(lams, 12)):
        c = _lag_polynomial(np.asarray(beta) + lam * np.asarray(gamma))
        comp = np.zeros((LAG_WINDOW, LAG_WINDOW))
        comp[0] = c
        comp[1:, :-1] = np.eye(LAG_WINDOW - 1)
        worst = max(worst, float(np.max(np.abs(np.linalg.eigvals(comp)))))
    return worst


def lipschitz_bound(beta, gamma, theta, gnn_gamma, w) -> float:
    """Contraction bound of the full (possibly nonlinear) lag map.

    Measured in the max-over-lags Euclidean norm: each HAR column is a convex
    combination of lags, ``||W||_2`` is its spectral radius and ReLU is
    1-Lipschitz.  A value below 1 guarantees stability; it is informative
    only, since it is far more conservative than needed in practice.
    """
    rho = float(np.max(np.abs(np.linalg.eigvalsh(w)))) if np.size(w) else 0.0
    total = np.sum(np.abs(beta)) + rho * np.sum(np.abs(gamma))
    if theta is not None:
        total += rho * float(np.sum(np.abs(gnn_gamma) * np.sum(np.abs(theta), axis=0)))
    return float(total)


def _step(hist, alpha, beta, gamma, theta, gnn_gamma, w):
    # hist: (22, N) most recent lag first
    v = (_LAG_WEIGHTS @ hist).T  # (N, 3)
    out = alpha + v @ beta + (w @ v) @ gamma
    if theta is not None:
        out = out + np.maximum((w @ v) @ theta, 0.0) @ gnn_gamma
    return out


def fixed_point(alpha, beta, gamma, theta, gnn_gamma, w, tol=1e-13, max_iter=100000) -> np.ndarray:
    """Deterministic steady state of the recursion with constant history."""
    n = alpha.size
    x = np.zeros(n)
    for _ in range(max_iter):
        nxt = _step(np.tile(x, (LAG_WINDOW, 1)), alpha, beta, gamma, theta, gnn_gamma, w)
        if np.max(np.abs(nxt - x)) <= tol * (1.0 + np.max(np.abs(x))):
            return nxt
        x = nxt
    raise UnstableDGPError("fixed-point iteration of the DGP did not settle")


def precision_from_graph(adjacency, rho: float = 0.5) -> np.ndarray:
    """Unit-diagonal precision ``I - rho * normalize(A)`` (PD for |rho| < 1)."""
    if not -1 < rho < 1:
        raise ValueError("rho must lie in (-1, 1)")
    return np.eye(len(adjacency)) - rho * normalize(adjacency)


def generate_synthetic_panel(adjacency, coefficients, noise_scale: float, T: int, seed: int, *,
                             linear_spillover=None, space: str = "log", burn_in: int = 500,
                             start: str = "2000-01-03",
                             assets: Optional[Sequence[str]] = None,
                             return_rho: float = 0.5) -> SyntheticPanel:
    """Simulate ``T`` days of log-RV and returns on the graph ``adjacency``.

    ``coefficients`` is a LinearParams (HAR or GHAR on log-RV) or a one-layer
    GnnParams (HAR + nonlinear spillover on log-RV).  ``linear_spillover``
    adds a linear ``W V gamma`` term to a GnnParams recursion.  The
    simulation starts at the deterministic fixed point and discards
    ``burn_in`` days.
    """
    if space not in ("log", "level"):
        raise ValueError(f"space must be 'log' or 'level', got {space!r}")
    a = check_adjacency(adjacency)
    n = a.shape[0]
    if T < 1:
        raise ValueError("T must be positive")
    if noise_scale < 0:
        raise ValueError("noise_scale must be nonnegative")
    alpha, beta, gamma, theta, gnn_gamma = _split(coefficients)
    if linear_spillover is not None:
        if theta is None:
            raise ValueError("linear_spillover only applies to GnnParams; use LinearParams.gamma")
        gamma = np.asarray(linear_spillover, dtype=float)
        if gamma.shape != (3,):
            raise ShapeError("linear_spillover must have shape (3,)")
    if alpha.shape != (n,):
        raise ShapeError(f"alpha has {alpha.size} entries for a {n}-node graph")
    w = normalize(a)
    rho = spectral_radius(beta, gamma, w)
    if rho >= 1.0:
        raise UnstableDGPError(f"linear recursion has spectral radius {rho:.4f} >= 1")
    if theta is not None:
        # ReLU fully active turns the nonlinear term into extra linear spillover
        rho_on = spectral_radius(beta, gamma + theta @ gnn_gamma, w)
        if rho_on >= 1.0:
            raise UnstableDGPError(f"recursion with all ReLU units active has spectral radius {rho_on:.4f} >= 1")

    rng = np.random.default_rng(seed)
    x_star = fixed_point(alpha, beta, gamma, theta, gnn_gamma, w)
    hist = np.tile(x_star, (LAG_WINDOW, 1))
    total = burn_in + T
    shocks = rng.standard_normal((total, n)) * noise_scale
    if space == "level":
        if np.any(x_star <= 0):
            raise UnstableDGPError("level recursion has a nonpositive steady state")
        shocks = np.exp(shocks - 0.5 * noise_scale ** 2)
    log_rv = np.empty((total, n))
    # mixed ReLU regimes are not covered by the two linear checks above
    limit = 50.0 * (1.0 + noise_scale) * (1.0 + np.max(np.abs(x_star)))
    for t in range(total):
        mean = _step(hist, alpha, beta, gamma, theta, gnn_gamma, w)
        if space == "log":
            x = mean + shocks[t]
        elif np.all(mean > 0):
            x = mean * shocks[t]
        else:
            raise UnstableDGPError(f"level recursion produced a nonpositive conditional mean at step {t}")
        if not np.all(np.abs(x - x_star) < limit):
            raise UnstableDGPError(f"simulated log-RV diverged at step {t}")
        log_rv[t] = x
        hist = np.roll(hist, 1, axis=0)
        hist[0] = x
    log_rv = log_rv[burn_in:]
    if space == "level":
        rv = log_rv
        log_rv = np.log(rv)
    else:
        rv = np.exp(log_rv)

    prec = precision_from_graph(a, return_rho)
    cov = np.linalg.inv(prec)
    sd = np.sqrt(np.diag(cov))
    corr = cov / np.outer(sd, sd)
    z = rng.standard_normal((T, n)) @ np.linalg.cholesky(corr).T
    returns = np.sqrt(rv) * z

    dates = business_days(start, T)
    names = tuple(assets) if assets is not None else tuple(f"A{i:02d}" for i in range(n))
    panel = RvPanel(dates, names, rv)
    return SyntheticPanel(panel, returns, rv.mean(axis=1), prec, log_rv)
