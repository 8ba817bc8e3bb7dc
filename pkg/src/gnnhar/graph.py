"""Spillover-graph algebra and graphical-lasso estimation.

Adjacency matrices are plain ``(N, N)`` integer arrays with entries in
{0, 1}, symmetric, zero diagonal.  Unreachable pairs in distance matrices are
marked with ``UNREACHABLE``.
"""

from __future__ import annotations

import csv
import logging
from collections import deque
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numba import njit

from .errors import ConvergenceError, DataError, NumericalError, ParseError, ShapeError

logger = logging.getLogger(__name__)

UNREACHABLE = -1
SUPPORT_THRESHOLD = 1e-8


def check_adjacency(a) -> np.ndarray:
    a = np.asarray(a)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ShapeError(f"adjacency must be square, got shape {a.shape}")
    if not np.all((a == 0) | (a == 1)):
        raise ShapeError("adjacency entries must be 0 or 1")
    if not np.array_equal(a, a.T):
        raise ShapeError("adjacency must be symmetric")
    if np.any(np.diag(a)):
        raise ShapeError("adjacency must have a zero diagonal")
    return a.astype(np.int64)


def normalize(a) -> np.ndarray:
    """Symmetric degree normalization ``O^{-1/2} A O^{-1/2}``.

    Isolated nodes keep all-zero rows and columns.
    """
    a = check_adjacency(a).astype(float)
    deg = a.sum(axis=1)
    inv_sqrt = np.zeros_like(deg)
    nz = deg > 0
    inv_sqrt[nz] = 1.0 / np.sqrt(deg[nz])
    return a * inv_sqrt[:, None] * inv_sqrt[None, :]


def hop2(a) -> np.ndarray:
    """Adjacency of exact-distance-2 neighbours.

    Boolean form ``(A^2 AND NOT A) XOR I``; the diagonal is then cleared
    because the XOR alone marks isolated nodes as their own 2nd-hop neighbour.
    """
    a = check_adjacency(a)
    reach2 = (a @ a) > 0
    out = np.logical_xor(reach2 & ~a.astype(bool), np.eye(a.shape[0], dtype=bool))
    np.fill_diagonal(out, False)
    return out.astype(np.int64)


def _bfs(nbrs, source, limit=None):
    dist = {source: 0}
    queue = deque([source])
    while queue:
        u = queue.popleft()
        if limit is not None and dist[u] >= limit:
            continue
        for w in nbrs[u]:
            if w not in dist:
                dist[w] = dist[u] + 1
                queue.append(w)
    return dist


def _neighbour_lists(a):
    return [np.flatnonzero(row).tolist() for row in a]


def shortest_path_distances(a) -> np.ndarray:
    """All-pairs hop counts by BFS from every node; ``UNREACHABLE`` where no path."""
    a = check_adjacency(a)
    n = a.shape[0]
    nbrs = _neighbour_lists(a)
    out = np.full((n, n), UNREACHABLE, dtype=np.int64)
    for s in range(n):
        for t, d in _bfs(nbrs, s).items():
            out[s, t] = d
    return out


def k_hop_neighbors(a, v: int, k: int) -> set:
    """Nodes within ``k`` hops of ``v``, ``v`` itself included."""
    a = check_adjacency(a)
    if not 0 <= v < a.shape[0]:
        raise IndexError(f"node {v} out of range for {a.shape[0]} nodes")
    if k < 0:
        raise ValueError("k must be nonnegative")
    return set(_bfs(_neighbour_lists(a), v, limit=k))


def diameter(a) -> int:
    """Longest shortest path; ``UNREACHABLE`` for a disconnected graph."""
    spd = shortest_path_distances(a)
    if np.any(spd == UNREACHABLE):
        return UNREACHABLE
    return int(spd.max()) if spd.size else 0


def spd_frequency(a) -> dict:
    """Percentage of unordered node pairs at each shortest-path distance."""
    spd = shortest_path_distances(a)
    iu = np.triu_indices(spd.shape[0], k=1)
    pairs = spd[iu]
    if pairs.size == 0:
        return {}
    out = {}
    for d in sorted(set(pairs.tolist()) - {UNREACHABLE}):
        out[int(d)] = 100.0 * np.mean(pairs == d)
    if np.any(pairs == UNREACHABLE):
        out["inf"] = 100.0 * np.mean(pairs == UNREACHABLE)
    return out


# ---------------------------------------------------------------------------
# graphical lasso


@dataclass(frozen=True)
class PrecisionEstimate:
    theta: np.ndarray
    penalty: float
    objective: float
    covariance: np.ndarray
    objectives: np.ndarray
    n_iter: int


@njit(cache=True)
def _penalized_objective(S, theta, lam):
    L = np.linalg.cholesky(theta)
    logdet = 2.0 * np.sum(np.log(np.diag(L)))
    pen = 0.0
    p = S.shape[0]
    for i in range(p):
        for j in range(p):
            if i != j:
                pen += abs(theta[i, j])
    return -logdet + np.sum(S * theta) + lam * pen


@njit(cache=True)
def _primal_glasso(S, lam, tol, max_iter, inner_tol, inner_max):
    # Block coordinate descent on the primal: each column update minimizes the
    # penalized objective exactly over (theta_12, theta_22), so iterates stay
    # positive definite and the objective never increases.
    p = S.shape[0]
    theta = np.zeros((p, p))
    W = np.zeros((p, p))
    for i in range(p):
        theta[i, i] = 1.0 / S[i, i]
        W[i, i] = S[i, i]
    objectives = np.empty(max_iter + 1)
    objectives[0] = _penalized_objective(S, theta, lam)
    converged = False
    n_iter = 0
    idx = np.empty(p - 1, dtype=np.int64)
    for it in range(max_iter):
        W_old = W.copy()
        for j in range(p):
            c = 0
            for k in range(p):
                if k != j:
                    idx[c] = k
                    c += 1
            s22 = S[j, j]
            w22 = W[j, j]
            m = p - 1
            ainv = np.empty((m, m))
            s12 = np.empty(m)
            beta = np.empty(m)
            for a in range(m):
                s12[a] = S[idx[a], j]
                beta[a] = theta[idx[a], j]
                for b in range(m):
                    ainv[a, b] = W[idx[a], idx[b]] - W[idx[a], j] * W[idx[b], j] / w22
            grad = ainv @ beta
            for sweep in range(inner_max):
                max_change = 0.0
                for k in range(m):
                    akk = ainv[k, k]
                    r = s12[k] + s22 * (grad[k] - akk * beta[k])
                    if r > lam:
                        new = -(r - lam) / (s22 * akk)
                    elif r < -lam:
                        new = -(r + lam) / (s22 * akk)
                    else:
                        new = 0.0
                    delta = new - beta[k]
                    if delta != 0.0:
                        for a in range(m):
                            grad[a] += ainv[a, k] * delta
                        beta[k] = new
                        if abs(delta) > max_change:
                            max_change = abs(delta)
                if max_change < inner_tol:
                    break
            ab = ainv @ beta
            theta22 = beta @ ab + 1.0 / s22
            for a in range(m):
                theta[idx[a], j] = beta[a]
                theta[j, idx[a]] = beta[a]
            theta[j, j] = theta22
            W[j, j] = s22
            for a in range(m):
                W[idx[a], j] = -s22 * ab[a]
                W[j, idx[a]] = -s22 * ab[a]
                for b in range(m):
                    W[idx[a], idx[b]] = ainv[a, b] + s22 * ab[a] * ab[b]
        n_iter = it + 1
        objectives[n_iter] = _penalized_objective(S, theta, lam)
        if np.max(np.abs(W - W_old)) < tol:
            converged = True
            break
    return theta, W, objectives[: n_iter + 1], converged


def standardized_covariance(returns) -> np.ndarray:
    x = np.asarray(returns, dtype=float)
    if x.ndim != 2 or x.shape[0] < 2:
        raise DataError("need a T x N return matrix with T >= 2")
    if not np.all(np.isfinite(x)):
        raise DataError("returns contain non-finite values")
    x = x - x.mean(axis=0)
    sd = x.std(axis=0)
    if np.any(sd <= 0):
        cols = np.flatnonzero(sd <= 0).tolist()
        raise NumericalError(f"degenerate covariance: zero-variance columns {cols}")
    x = x / sd
    return x.T @ x / x.shape[0]


def glasso_covariance(S, penalty: float, tol: float = 1e-6, max_iter: int = 500) -> PrecisionEstimate:
    """Graphical lasso on a given covariance matrix (diagonal unpenalized)."""
    S = np.ascontiguousarray(S, dtype=float)
    if penalty < 0:
        raise ValueError("penalty must be nonnegative")
    if np.any(np.diag(S) <= 0):
        raise NumericalError("degenerate covariance: nonpositive diagonal")
    if S.shape[0] == 1:
        theta = np.array([[1.0 / S[0, 0]]])
        obj = float(np.log(S[0, 0]) + 1.0)
        return PrecisionEstimate(theta, penalty, obj, S, np.array([obj]), 0)
    theta, _, objectives, converged = _primal_glasso(S, float(penalty), float(tol), int(max_iter), tol * 1e-2, 1000)
    if not converged:
        raise ConvergenceError(
            f"graphical lasso did not converge in {max_iter} sweeps (penalty={penalty:g})",
            last_objective=float(objectives[-1]),
        )
    rises = np.diff(objectives)
    if np.any(rises > 1e-10 * (1.0 + np.abs(objectives[1:]))):
        raise NumericalError(f"graphical lasso objective increased by {rises.max():.3g}")
    theta = 0.5 * (theta + theta.T)
    return PrecisionEstimate(theta, float(penalty), float(objectives[-1]), S, objectives, len(objectives) - 1)


def glasso_fit(returns, penalty: float, tol: float = 1e-6, max_iter: int = 500) -> PrecisionEstimate:
    """Sparse precision matrix of column-standardized returns.

    Minimizes ``-log det(Theta) + tr(S Theta) + penalty * sum_{i != j} |Theta_ij|``.
    """
    return glasso_covariance(standardized_covariance(returns), penalty, tol, max_iter)


def default_penalty_grid(S, n: int = 20, ratio: float = 0.01) -> np.ndarray:
    off = np.abs(S - np.diag(np.diag(S)))
    lam_max = float(off.max()) if off.size else 0.0
    if lam_max <= 0:
        return np.array([0.0])
    return np.geomspace(ratio * lam_max, lam_max, n)


def support(theta, threshold: float = SUPPORT_THRESHOLD) -> np.ndarray:
    a = np.abs(np.asarray(theta)) > threshold
    a = a | a.T
    np.fill_diagonal(a, False)
    return a.astype(np.int64)


@dataclass(frozen=True)
class GraphSelection:
    adjacency: np.ndarray
    penalty: float
    grid: np.ndarray
    cv_scores: np.ndarray
    estimate: PrecisionEstimate


def glasso_select(returns, penalty_grid=None, folds: int = 5, seed: int = 0,
                  tol: float = 1e-6, max_iter: int = 500, rule: str = "one_se") -> GraphSelection:
    """Cross-validated graphical lasso.

    Folds are contiguous time blocks (no shuffling, so ``seed`` only matters
    for interface symmetry with other estimators).  Each candidate penalty is
    scored by the held-out Gaussian log-likelihood
    ``log det(Theta) - tr(S_hold Theta)``.  ``rule="best"`` takes the best
    mean score; ``rule="one_se"`` takes the largest penalty whose mean score is
    within one standard error of the best, which avoids the spurious edges
    that pure likelihood CV is known to admit.  The winner is refit on all rows.
    """
    if rule not in ("best", "one_se"):
        raise ValueError(f"unknown selection rule {rule!r}")
    if folds < 2:
        raise ValueError(f"folds must be >= 2, got {folds}")
    x = np.asarray(returns, dtype=float)
    S_all = standardized_covariance(x)
    grid = default_penalty_grid(S_all) if penalty_grid is None else np.asarray(penalty_grid, dtype=float)
    if grid.size == 0:
        raise ValueError("penalty grid is empty")
    x = (x - x.mean(axis=0)) / x.std(axis=0)
    bounds = np.linspace(0, x.shape[0], folds + 1).astype(int)
    if np.any(np.diff(bounds) < 2):
        raise DataError(f"{x.shape[0]} rows are too few for {folds} folds")
    scores = np.zeros((folds, grid.size))
    for f in range(folds):
        hold = np.zeros(x.shape[0], dtype=bool)
        hold[bounds[f]:bounds[f + 1]] = True
        S_train = x[~hold].T @ x[~hold] / (~hold).sum()
        S_hold = x[hold].T @ x[hold] / hold.sum()
        for g, lam in enumerate(grid):
            est = glasso_covariance(S_train, lam, tol, max_iter)
            _, logdet = np.linalg.slogdet(est.theta)
            scores[f, g] = logdet - np.sum(S_hold * est.theta)
    mean_scores = scores.mean(axis=0)
    best = int(np.argmax(mean_scores))
    if rule == "one_se":
        se = scores[:, best].std(ddof=1) / np.sqrt(folds)
        within = np.flatnonzero(mean_scores >= mean_scores[best] - se)
        best = int(within[np.argmax(grid[within])])
    est = glasso_covariance(S_all, grid[best], tol, max_iter)
    logger.debug("glasso CV picked penalty %.4g (index %d of %d)", grid[best], best, grid.size)
    return GraphSelection(support(est.theta), float(grid[best]), grid, mean_scores, est)


def glasso_graph(returns, penalty_grid=None, folds: int = 5, seed: int = 0, **kw) -> np.ndarray:
    """Adjacency from the support of the cross-validated precision matrix."""
    return glasso_select(returns, penalty_grid, folds, seed, **kw).adjacency


# ---------------------------------------------------------------------------
# files


def write_edges(a, assets, path) -> None:
    a = check_adjacency(a)
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["i", "j"])
        for i, j in zip(*np.triu_indices(a.shape[0], k=1)):
            if a[i, j]:
                w.writerow([assets[i], assets[j]])


def read_edges(path, assets) -> np.ndarray:
    pos = {s: k for k, s in enumerate(assets)}
    a = np.zeros((len(assets), len(assets)), dtype=np.int64)
    with Path(path).open(newline="") as fh:
        r = csv.reader(fh)
        header = next(r, None)
        if header != ["i", "j"]:
            raise ParseError(path, 1, "header", "expected i,j")
        for line, row in enumerate(r, start=2):
            if not row:
                continue
            if len(row) != 2:
                raise ParseError(path, line, "row", "expected 2 fields")
            for name, sym in zip("ij", row):
                if sym not in pos:
                    raise ParseError(path, line, name, f"unknown asset {sym!r}")
            i, j = pos[row[0]], pos[row[1]]
            if i == j:
                raise ParseError(path, line, "j", "self-loop")
            a[i, j] = a[j, i] = 1
    return a


def write_spd_report(a, path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["spd", "frequency_pct"])
        for d, pct in spd_frequency(a).items():
            w.writerow([d, f"{pct:.4f}"])
