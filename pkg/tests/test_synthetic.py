import numpy as np
import pytest

from conftest import random_graph, ring
from gnnhar.errors import ShapeError, UnstableDGPError
from gnnhar.graph import normalize
from gnnhar.model import GnnParams, LinearParams
from gnnhar.synthetic import (
    business_days,
    fixed_point,
    generate_synthetic_panel,
    precision_from_graph,
    spectral_radius,
)


def _full_companion_radius(beta, gamma, w):
    """Spectral radius of the 22N-dimensional companion matrix, built directly."""
    n = w.shape[0]
    lag_w = np.zeros((3, 22))
    lag_w[0, 0] = 1
    lag_w[1, 1:5] = 0.25
    lag_w[2, 5:22] = 1 / 17
    c = np.zeros((22 * n, 22 * n))
    for k in range(22):
        block = sum(lag_w[j, k] * (beta[j] * np.eye(n) + gamma[j] * w) for j in range(3))
        c[:n, k * n:(k + 1) * n] = block
    c[n:, :-n] = np.eye(21 * n)
    return np.max(np.abs(np.linalg.eigvals(c)))


@pytest.mark.parametrize("seed", range(4))
def test_spectral_radius_matches_full_companion(seed):
    rng = np.random.default_rng(seed)
    w = normalize(random_graph(rng, 5, 0.5))
    beta = rng.uniform(0, 0.4, 3)
    gamma = rng.uniform(-0.3, 0.3, 3)
    assert spectral_radius(beta, gamma, w) == pytest.approx(_full_companion_radius(beta, gamma, w), rel=1e-8)


def test_business_days():
    d = business_days("2000-01-01", 3)  # a Saturday
    assert [str(x) for x in d] == ["2000-01-03", "2000-01-04", "2000-01-05"]


def test_precision_has_graph_support():
    a = ring(6)
    p = precision_from_graph(a, 0.7)
    np.linalg.cholesky(p)
    off = p - np.diag(np.diag(p))
    np.testing.assert_array_equal(off != 0, a > 0)
    with pytest.raises(ValueError):
        precision_from_graph(a, 1.0)


def test_zero_noise_sits_at_fixed_point():
    a = ring(4)
    p = LinearParams(np.full(4, -1.0), [0.3, 0.3, 0.2], [0.1, 0, 0])
    s = generate_synthetic_panel(a, p, 0.0, 50, seed=0)
    x_star = fixed_point(p.alpha, p.beta, p.gamma, None, None, normalize(a))
    np.testing.assert_allclose(s.log_rv, np.tile(x_star, (50, 1)), rtol=1e-12)
    # steady state of a linear recursion: alpha / (1 - sum beta - sum gamma) on a regular graph
    np.testing.assert_allclose(x_star, -1.0 / (1 - 0.8 - 0.1), rtol=1e-10)


def test_daily_ar1_autocorrelation():
    a = np.zeros((3, 3), dtype=int)
    p = LinearParams(np.zeros(3), [0.8, 0, 0])
    s = generate_synthetic_panel(a, p, 1.0, 20000, seed=1)
    x = s.log_rv[:, 0]
    r = np.corrcoef(x[1:], x[:-1])[0, 1]
    assert r == pytest.approx(0.8, abs=0.02)


def test_determinism_and_seed_sensitivity():
    a = ring(5)
    g = GnnParams(np.full(5, 0.1), [0.1, 0.3, 0.3], [np.array([[1.0], [-1.0], [0.0]])], [0.8])
    kw = dict(linear_spillover=[0.15, 0, 0], space="level")
    s1 = generate_synthetic_panel(a, g, 0.4, 100, 3, **kw)
    s2 = generate_synthetic_panel(a, g, 0.4, 100, 3, **kw)
    s3 = generate_synthetic_panel(a, g, 0.4, 100, 4, **kw)
    assert np.array_equal(s1.panel.values, s2.panel.values)
    assert np.array_equal(s1.returns, s2.returns)
    assert not np.array_equal(s1.panel.values, s3.panel.values)
    assert np.all(s1.panel.values > 0)
    np.testing.assert_allclose(s1.index_rv, s1.panel.values.mean(axis=1))


def test_unstable_dgp_is_rejected():
    a = ring(4)
    with pytest.raises(UnstableDGPError):
        generate_synthetic_panel(a, LinearParams(np.zeros(4), [0.6, 0.3, 0.2]), 0.1, 10, 0)
    g = GnnParams(np.zeros(4), [0.3, 0.3, 0.2], [np.ones((3, 1))], [0.5])
    with pytest.raises(UnstableDGPError):
        generate_synthetic_panel(a, g, 0.1, 10, 0)
    with pytest.raises(UnstableDGPError):
        generate_synthetic_panel(a, LinearParams(np.full(4, -1.0), [0.3, 0.3, 0.2]), 0.1, 10, 0, space="level")


def test_argument_checks():
    a = ring(4)
    p = LinearParams(np.zeros(4), [0.3, 0.3, 0.2])
    with pytest.raises(ShapeError):
        generate_synthetic_panel(a, LinearParams(np.zeros(3), [0.3, 0.3, 0.2]), 0.1, 10, 0)
    with pytest.raises(ValueError):
        generate_synthetic_panel(a, p, -1.0, 10, 0)
    with pytest.raises(ValueError):
        generate_synthetic_panel(a, p, 0.1, 10, 0, space="exp")
    with pytest.raises(ValueError):
        generate_synthetic_panel(a, p, 0.1, 10, 0, linear_spillover=[0.1, 0, 0])
