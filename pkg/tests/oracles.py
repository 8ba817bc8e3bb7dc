"""Independent reference implementations used as test oracles.

Each one is written from the definition with plain loops, sharing no code
with the package beyond the public objects it checks.
"""

import numpy as np


def central_difference(f, arrays, step=1e-6):
    """Gradient of ``f(arrays)`` by central differences, same layout as ``arrays``."""
    grads = []
    for a in arrays:
        g = np.zeros_like(a)
        for idx in np.ndindex(a.shape):
            old = a[idx]
            a[idx] = old + step
            up = f(arrays)
            a[idx] = old - step
            down = f(arrays)
            a[idx] = old
            g[idx] = (up - down) / (2 * step)
        grads.append(g)
    return grads


def max_relative_error(numeric, analytic):
    """Elementwise ``|fd - g| / max(|fd|, |g|, 1e-3 * max|g|)``, maximized."""
    fd = np.concatenate([np.ravel(x) for x in numeric])
    g = np.concatenate([np.ravel(x) for x in analytic])
    floor = 1e-3 * max(np.max(np.abs(g)), 1e-300)
    return float(np.max(np.abs(fd - g) / np.maximum(np.maximum(np.abs(fd), np.abs(g)), floor)))


def naive_forward(v, w, alpha, beta, layers, gamma):
    """GNNHAR forecast for one day with explicit loops."""
    n = v.shape[0]
    h = [list(v[i]) for i in range(n)]
    for theta in layers:
        agg = [[sum(w[i][j] * h[j][k] for j in range(n)) for k in range(len(h[0]))] for i in range(n)]
        h = [[max(0.0, sum(agg[i][k] * theta[k][m] for k in range(len(agg[0])))) for m in range(theta.shape[1])]
             for i in range(n)]
    return np.array([
        alpha[i] + sum(v[i][k] * beta[k] for k in range(3)) + sum(h[i][m] * gamma[m] for m in range(len(gamma)))
        for i in range(n)
    ])


def naive_fvu(f, b):
    out = []
    for t in range(f.shape[0]):
        n = f.shape[1]
        mean = sum(f[t, i] for i in range(n)) / n
        num = sum((f[t, i] - b[t, i]) ** 2 for i in range(n))
        den = sum((f[t, i] - mean) ** 2 for i in range(n))
        out.append(num / den if den > 0 else np.nan)
    return np.array(out)


def naive_mad(h, a):
    n = h.shape[0]
    row_means = []
    for i in range(n):
        dists = []
        for j in range(n):
            if not a[i, j]:
                continue
            ni = np.sqrt(sum(x * x for x in h[i]))
            nj = np.sqrt(sum(x * x for x in h[j]))
            if ni == 0 or nj == 0:
                continue
            d = 1.0 - sum(x * y for x, y in zip(h[i], h[j])) / (ni * nj)
            if d > 0:
                dists.append(d)
        if dists:
            row_means.append(sum(dists) / len(dists))
    row_means = [m for m in row_means if m > 0]
    return sum(row_means) / len(row_means) if row_means else 0.0


def bfs_hops(a, v, k):
    seen = {v}
    frontier = [v]
    for _ in range(k):
        nxt = []
        for u in frontier:
            for w in range(a.shape[0]):
                if a[u, w] and w not in seen:
                    seen.add(w)
                    nxt.append(w)
        frontier = nxt
    return seen


def bfs_distances(a, v):
    """Hop distance from v to every node, -1 when unreachable."""
    n = a.shape[0]
    dist = [-1] * n
    dist[v] = 0
    frontier = [v]
    while frontier:
        nxt = []
        for u in frontier:
            for w in range(n):
                if a[u, w] and dist[w] < 0:
                    dist[w] = dist[u] + 1
                    nxt.append(w)
        frontier = nxt
    return dist
