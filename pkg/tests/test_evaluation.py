import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from conftest import make_panel, random_graph, ring
from gnnhar.backtest import ForecastSet
from gnnhar.errors import DataError, DegenerateStatisticError, ShapeError
from gnnhar.evaluation import (
    CROSS_ROW,
    block_bootstrap_indices,
    coefficient_trajectory_report,
    dm_table,
    dm_test,
    five_number,
    fvu,
    loss_matrix,
    loss_table,
    mad,
    mad_details,
    mcs,
    newey_west_variance,
    stratify_by_regime,
)
from oracles import naive_fvu, naive_mad


# ---------------------------------------------------------------------------
# Diebold-Mariano


def test_newey_west_lag0_is_variance(rng):
    d = rng.normal(size=200)
    assert newey_west_variance(d, 0) == pytest.approx(np.var(d))


def test_newey_west_matches_loop(rng):
    d = rng.normal(size=50)
    e = d - d.mean()
    lag = 3
    ref = sum(e[t] * e[t] for t in range(50)) / 50
    for k in range(1, lag + 1):
        ref += 2 * (1 - k / (lag + 1)) * sum(e[t] * e[t - k] for t in range(k, 50)) / 50
    assert newey_west_variance(d, lag) == pytest.approx(ref, rel=1e-12)


def test_dm_statistic_by_hand(rng):
    a = rng.normal(1.0, 1.0, 100)
    b = rng.normal(1.0, 1.0, 100)
    d = a - b
    n = 100
    raw = d.mean() / np.sqrt(np.var(d) / n)
    expected = raw * np.sqrt((n + 1 - 2 + 0) / n)
    assert dm_test(a, b, 0).statistic == pytest.approx(expected, rel=1e-12)


@given(arrays(np.float64, 30, elements=st.floats(0, 10)), arrays(np.float64, 30, elements=st.floats(0, 10)),
       st.integers(0, 5))
@settings(max_examples=100, deadline=None)
def test_dm_antisymmetry(a, b, h):
    try:
        ab = dm_test(a, b, h)
    except DegenerateStatisticError:
        return
    ba = dm_test(b, a, h)
    assert ab.statistic == -ba.statistic
    assert ab.p_value == ba.p_value


def test_dm_edge_cases():
    x = np.linspace(0, 1, 20)
    assert dm_test(x, x).statistic == 0.0 and dm_test(x, x).p_value == 1.0
    with pytest.raises(DegenerateStatisticError):
        dm_test(np.full(20, 2.0), np.ones(20))
    with pytest.raises(DataError):
        dm_test(x[:5], x[:5])
    with pytest.raises(ShapeError):
        dm_test(x, x[:-1])


def test_dm_table_has_cross_row(rng):
    a = rng.random((40, 3))
    b = rng.random((40, 3))
    rows = dm_table(a, b, ["X", "Y", "Z"], h=1)
    assert [r[0] for r in rows] == ["X", "Y", "Z", CROSS_ROW]
    assert rows[-1][1] == pytest.approx(dm_test(a.mean(axis=1), b.mean(axis=1), 1).statistic)


# ---------------------------------------------------------------------------
# model confidence set


def test_block_bootstrap_indices_are_contiguous_blocks(rng):
    idx = block_bootstrap_indices(23, 5, 7, rng)
    assert idx.shape == (7, 23) and idx.min() >= 0 and idx.max() < 23
    for row in idx:
        for start in range(0, 20, 5):
            assert np.all(np.diff(row[start:start + 5]) == 1)


def test_mcs_identical_models_all_survive(rng):
    base = rng.normal(size=300)
    res = mcs(np.tile(base, (4, 1)), bootstrap_reps=200, names=list("abcd"))
    assert res.surviving == list("abcd") and not res.eliminated


def test_mcs_eliminates_clearly_worse_model(rng):
    good = rng.normal(size=(3, 400))
    bad = rng.normal(size=400) + 3.0
    res = mcs(np.vstack([good, bad]), bootstrap_reps=300, seed=1, names=["a", "b", "c", "bad"])
    assert "bad" not in res.surviving and "bad" in res.eliminated
    assert all(0 <= p <= 1 for p in res.p_values.values())


def test_mcs_p_values_nondecreasing_in_elimination_order(rng):
    L = rng.normal(size=(5, 200)) + np.linspace(0, 0.3, 5)[:, None]
    res = mcs(L, bootstrap_reps=200, seed=2)
    order = sorted(res.p_values, key=lambda k: res.p_values[k])
    ps = [res.p_values[k] for k in order]
    assert ps == sorted(ps) and max(ps) == 1.0


def test_mcs_is_seeded(rng):
    L = rng.normal(size=(3, 100))
    assert mcs(L, seed=5, bootstrap_reps=100).p_values == mcs(L, seed=5, bootstrap_reps=100).p_values
    with pytest.raises(ShapeError):
        mcs(L[:1])
    with pytest.raises(DegenerateStatisticError):
        mcs(np.array([[1.0, np.nan], [1.0, 2.0]]))


# ---------------------------------------------------------------------------
# regimes, FVU, MAD


def test_regime_split():
    calm, turb = stratify_by_regime(np.arange(100), 0.9)
    assert calm.sum() == 90 and turb.sum() == 10
    calm, turb = stratify_by_regime(np.ones(10), 0.9)
    assert calm.all()
    calm, _ = stratify_by_regime(np.arange(10), 0.5)
    assert calm.sum() == 5
    with pytest.raises(ValueError):
        stratify_by_regime(np.arange(5), 1.0)


@given(st.integers(1, 20), st.integers(2, 20), st.integers(0, 2**31 - 1))
@settings(max_examples=50, deadline=None)
def test_fvu_matches_loops(days, n, seed):
    rng = np.random.default_rng(seed)
    f = rng.normal(size=(days, n))
    b = rng.normal(size=(days, n))
    np.testing.assert_allclose(fvu(f, b), naive_fvu(f, b), rtol=1e-12, atol=0)


def test_fvu_special_cases(rng):
    f = rng.normal(size=(5, 4))
    assert np.all(fvu(f, f) == 0)
    np.testing.assert_allclose(fvu(f, np.repeat(f.mean(axis=1, keepdims=True), 4, axis=1)), 1.0)
    f[2] = 7.0
    assert np.isnan(fvu(f, f)[2])


def test_mad_matches_loops(rng):
    for _ in range(30):
        n = int(rng.integers(2, 21))
        a = random_graph(rng, n, 0.3)
        h = np.maximum(rng.normal(size=(n, 4)), 0)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            assert mad(h, a) == pytest.approx(naive_mad(h, a), rel=1e-12, abs=1e-15)


def test_mad_special_cases():
    a = np.array([[0, 1], [1, 0]])
    assert mad(np.array([[1.0, 0.0], [0.0, 2.0]]), a) == 1.0
    assert mad(np.ones((4, 3)), ring(4)) == 0.0
    value, excluded = mad_details(np.array([[1.0, 0.0], [0.0, 0.0]]), a)
    assert excluded == 1 and value == 0.0
    with pytest.warns(RuntimeWarning):
        mad(np.array([[1.0, 0.0], [0.0, 0.0]]), a)


def test_five_number_whiskers():
    x = np.array([1, 2, 3, 4, 5, 6, 7, 8, 9, 100.0])
    med, q1, q3, lo, hi = five_number(x)
    assert med == 5.5 and lo == 1 and hi == 9


# ---------------------------------------------------------------------------
# loss tables and trajectories


def _forecast_sets(panel, preds):
    out = []
    dates = panel.dates[:-1]
    for name, values in preds.items():
        out.append(ForecastSet(name, name[-1], 0, dates, panel.assets, values))
    return out


def test_loss_matrix_kinds():
    a = np.array([[1.0, 2.0]])
    p = np.array([[2.0, 2.0]])
    np.testing.assert_allclose(loss_matrix(a, p, "MSE"), [[1.0, 0.0]])
    np.testing.assert_allclose(loss_matrix(a, p, "QLIKE"), [[0.5 - np.log(0.5) - 1, 0.0]])
    with pytest.raises(ValueError):
        loss_matrix(a, p, "MAE")


def test_loss_table_ratios(rng):
    panel = make_panel(rng.uniform(1, 2, (30, 3)))
    truth = panel.values[:-1]
    preds = {"HAR_M": truth + 0.2, "GHAR_M": truth + 0.1}
    t = loss_table(_forecast_sets(panel, preds), panel, "HAR_M")
    assert t.ratio["HAR_M"][(0, "MSE")] == 1.0
    assert t.ratio["GHAR_M"][(0, "MSE")] == pytest.approx(0.25)
    assert t.columns == ["h0_mse_ratio", "h0_qlike_ratio"]
    with pytest.raises(DataError):
        loss_table(_forecast_sets(panel, preds), panel, "GNNHAR1L_Q")


def test_trajectory_report():
    doc = {"kind": "GHAR", "beta": {"values": [1.0, 2.0, 3.0]}, "gamma": {"values": [0.1, 0.2, 0.3]}}
    doc2 = {"kind": "GHAR", "beta": {"values": [3.0, 2.0, 1.0]}, "gamma": {"values": [0.1, 0.2, 0.3]}}
    rows = coefficient_trajectory_report([(0, "2010-01", "GHAR_Q", 0, [doc, doc2])], ["beta_d", "gamma_m"])
    assert rows == [(0, "2010-01", "GHAR_Q", 0, "beta_d", 2.0), (0, "2010-01", "GHAR_Q", 0, "gamma_m", 0.3)]
    with pytest.raises(DataError):
        coefficient_trajectory_report([(0, "2010-01", "GHAR_Q", 0, [doc])], ["delta_d"])
