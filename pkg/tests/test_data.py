import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from conftest import make_panel
from gnnhar.data import (
    IntradaySeries,
    RvPanel,
    build_horizon_targets,
    build_lag_features,
    compute_daily_rv,
    compute_rv_panel,
    horizon_sum,
    lag_feature_tensor,
    load_index_rv,
    load_intraday,
    load_returns,
    load_rv_panel,
    write_index_rv,
    write_returns,
    write_rv_panel,
)
from gnnhar.errors import (
    DataError,
    EmptyTargetError,
    InsufficientDataError,
    InsufficientHistoryError,
    ParseError,
    ShapeError,
)


def _series(prices, minutes=None, asset="X", day="2020-01-02"):
    prices = np.asarray(prices, dtype=float)
    if minutes is None:
        minutes = np.arange(prices.size)
    return IntradaySeries(asset, np.datetime64(day), minutes, prices)


# ---------------------------------------------------------------------------
# realized volatility


def test_rv_plain_grid_matches_sum_of_squared_returns(rng):
    p = 100 * np.exp(np.cumsum(rng.normal(0, 1e-3, 391)))
    s = _series(p)
    r = np.diff(np.log(p[::5]))
    assert compute_daily_rv(s, 5, 5) == pytest.approx(np.sum(r**2), rel=1e-12)


def test_rv_subsampled_is_mean_over_offsets(rng):
    p = 100 * np.exp(np.cumsum(rng.normal(0, 1e-3, 391)))
    s = _series(p)
    direct = []
    for off in range(5):
        r = np.diff(np.log(p[off::5]))
        direct.append(np.sum(r**2))
    assert compute_daily_rv(s, 5, 1) == pytest.approx(np.mean(direct), rel=1e-12)


def test_rv_constant_price_is_zero():
    assert compute_daily_rv(_series(np.full(60, 50.0)), 5, 1) == 0.0


def test_rv_uses_last_tick_before_grid_point():
    # ticks at 0, 3, 10: the 5-minute grid point samples the price at minute 3
    s = _series([1.0, 2.0, 4.0], minutes=[0, 3, 10])
    expected = np.log(2.0) ** 2 + np.log(2.0) ** 2
    assert compute_daily_rv(s, 5, 5) == pytest.approx(expected)


def test_rv_rejects_bad_inputs():
    with pytest.raises(InsufficientDataError):
        compute_daily_rv(_series([1.0, 1.1], minutes=[0, 2]), 5, 1)
    with pytest.raises(DataError):
        compute_daily_rv(_series(np.ones(30)), 5, 2)
    with pytest.raises(DataError):
        _series([1.0, -1.0])
    with pytest.raises(DataError):
        _series([1.0, 1.0, 1.0], minutes=[0, 2, 1])


def test_rv_panel_drops_incomplete_dates(rng):
    days = ["2020-01-02", "2020-01-03"]
    series = [_series(100 + rng.random(30), asset=a, day=d) for d in days for a in ("A", "B")]
    series = series[:-1]  # B missing on the second day
    panel = compute_rv_panel(series, 5, 1)
    assert panel.n_days == 1 and panel.assets == ("A", "B")
    with pytest.raises(DataError, match="holes"):
        compute_rv_panel(series, 5, 1, on_missing="error")


def test_panel_invariants():
    with pytest.raises(ShapeError):
        RvPanel(np.array(["2020-01-01"], dtype="datetime64[D]"), ("A", "B"), np.ones((1, 3)))
    with pytest.raises(DataError):
        make_panel([[np.nan, 1.0]])
    with pytest.raises(DataError):
        make_panel([[-1.0, 1.0]])
    with pytest.raises(DataError):
        RvPanel(np.array(["2020-01-02", "2020-01-01"], dtype="datetime64[D]"), ("A",), np.ones((2, 1)))


# ---------------------------------------------------------------------------
# features and targets


def test_lag_features_match_direct_means(rng):
    x = rng.random((40, 3))
    panel = make_panel(x)
    t = 30
    f = build_lag_features(panel, t).matrix
    np.testing.assert_allclose(f[:, 0], x[t - 1])
    np.testing.assert_allclose(f[:, 1], x[t - 5:t - 1].mean(axis=0))
    np.testing.assert_allclose(f[:, 2], x[t - 22:t - 5].mean(axis=0))


def test_lag_features_need_22_days(rng):
    panel = make_panel(rng.random((30, 2)))
    with pytest.raises(InsufficientHistoryError):
        build_lag_features(panel, 21)
    build_lag_features(panel, 22)


@given(arrays(np.float64, st.tuples(st.integers(22, 40), st.integers(1, 4)),
              elements=st.floats(0, 1e3, allow_nan=False)))
@settings(max_examples=40, deadline=None)
def test_batched_and_single_lag_features_agree_bitwise(x):
    panel = make_panel(x)
    batch = lag_feature_tensor(x)
    for k, t in enumerate(range(22, x.shape[0] + 1)):
        assert np.array_equal(batch[k], build_lag_features(panel, t).matrix)


@given(arrays(np.float64, st.tuples(st.integers(1, 30), st.integers(1, 3)),
              elements=st.floats(0, 1e3, allow_nan=False)), st.integers(0, 10))
@settings(max_examples=60, deadline=None)
def test_horizon_sum_matches_loop(x, h):
    if h >= x.shape[0]:
        return
    out = horizon_sum(x, h)
    assert out.shape == (x.shape[0] - h, x.shape[1])
    for t in range(out.shape[0]):
        np.testing.assert_allclose(out[t], x[t:t + h + 1].sum(axis=0), rtol=1e-12)


def test_horizon_targets_errors(rng):
    panel = make_panel(rng.random((5, 2)))
    assert build_horizon_targets(panel, 4).values.shape == (1, 2)
    with pytest.raises(EmptyTargetError):
        build_horizon_targets(panel, 5)
    with pytest.raises(EmptyTargetError):
        build_horizon_targets(panel, -1)


# ---------------------------------------------------------------------------
# files


def test_csv_round_trips(tmp_path, rng):
    panel = make_panel(rng.random((25, 3)) * 1e-4)
    write_rv_panel(panel, tmp_path / "rv.csv")
    back = load_rv_panel(tmp_path / "rv.csv")
    assert back.assets == panel.assets
    assert np.array_equal(back.dates, panel.dates)
    assert np.array_equal(back.values, panel.values)

    ret = rng.normal(size=(25, 3))
    write_returns(panel.dates, panel.assets, ret, tmp_path / "ret.csv")
    assert np.array_equal(load_returns(tmp_path / "ret.csv", panel), ret)
    dates, assets, x = load_returns(tmp_path / "ret.csv")
    assert assets == panel.assets and np.array_equal(x, ret)

    idx = rng.random(25)
    write_index_rv(panel.dates, idx, tmp_path / "idx.csv")
    d, v = load_index_rv(tmp_path / "idx.csv")
    assert np.array_equal(d, panel.dates) and np.array_equal(v, idx)


def test_parse_errors_name_line_and_field(tmp_path):
    p = tmp_path / "rv.csv"
    p.write_text("date,asset,rv\n2020-01-02,A,0.1\n2020-01-03,A,abc\n")
    with pytest.raises(ParseError) as info:
        load_rv_panel(p)
    assert info.value.line == 3 and info.value.field == "rv"
    p.write_text("date,asset,rv\n2020-13-02,A,0.1\n")
    with pytest.raises(ParseError) as info:
        load_rv_panel(p)
    assert info.value.field == "date"
    with pytest.raises(DataError):
        load_rv_panel(tmp_path / "missing.csv")


def test_intraday_loader(tmp_path):
    p = tmp_path / "intra.csv"
    p.write_text("date,asset,minute,price\n2020-01-02,A,0,10\n2020-01-02,A,5,11\n2020-01-02,A,10,10\n")
    (s,) = load_intraday(p)
    assert s.asset == "A" and s.minutes.tolist() == [0, 5, 10]
    assert compute_daily_rv(s, 5, 5) == pytest.approx(np.log(1.1) ** 2 + np.log(10 / 11) ** 2)
    p.write_text("date,asset,minute,price\n2020-01-02,A,0,-10\n")
    with pytest.raises(ParseError):
        load_intraday(p)
