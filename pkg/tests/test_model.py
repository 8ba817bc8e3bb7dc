import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import graphs, random_graph, ring
from gnnhar.errors import ShapeError
from gnnhar.graph import normalize
from gnnhar.model import (
    GnnParams,
    GraphOperators,
    LinearParams,
    ModelSpec,
    forecast,
    ghar_forward,
    gnnhar_forward,
    har_forward,
    load_params,
    params_from_dict,
    params_to_dict,
    receptive_field_check,
    save_params,
)
from oracles import bfs_hops, naive_forward


def _gnn(rng, n, layers, d=4):
    dims = [3] + [d] * layers
    return GnnParams(rng.normal(size=n), rng.normal(size=3),
                     [rng.normal(size=(a, b)) for a, b in zip(dims[:-1], dims[1:])], rng.normal(size=d))


def test_model_names_round_trip():
    for name in ("HAR_M", "GHAR_Q", "GHAR2Hop_M", "GNNHAR1L_Q", "GNNHAR12L_M"):
        assert ModelSpec.parse(name).name == name
    assert ModelSpec.parse("GNNHAR3L_Q", hidden_dim=5) == ModelSpec("GNNHAR", "Q", 3, 5)
    for bad in ("HAR", "GNNHAR_M", "GHAR_X", "LSTM_M"):
        with pytest.raises(ValueError):
            ModelSpec.parse(bad)
    with pytest.raises(ValueError):
        ModelSpec("GNNHAR", "M", 0)


def test_linear_forwards_by_hand():
    v = np.array([[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]])
    a = np.array([[0, 1], [1, 0]])
    p = LinearParams([0.1, 0.2], [1.0, 0.0, -1.0])
    np.testing.assert_allclose(har_forward(v, p), [0.1 - 2.0, 0.2 - 2.0])
    g = LinearParams([0.0, 0.0], [0.0, 0.0, 0.0], [1.0, 0.0, 0.0])
    # each node sees its neighbour's daily lag
    np.testing.assert_allclose(ghar_forward(v, normalize(a), g), [4.0, 1.0])


def test_forward_shape_errors(rng):
    v = rng.random((3, 3))
    with pytest.raises(ShapeError):
        har_forward(v, LinearParams(np.zeros(2), np.zeros(3)))
    with pytest.raises(ShapeError):
        har_forward(rng.random((3, 2)), LinearParams(np.zeros(3), np.zeros(3)))
    with pytest.raises(ShapeError):
        ghar_forward(v, np.eye(2), LinearParams(np.zeros(3), np.zeros(3), np.zeros(3)))
    with pytest.raises(ShapeError):
        GnnParams(np.zeros(3), np.zeros(3), [np.zeros((2, 4))], np.zeros(4))
    with pytest.raises(ShapeError):
        GnnParams(np.zeros(3), np.zeros(3), [np.zeros((3, 4))], np.zeros(5))


@given(graphs(min_n=2, max_n=8), st.integers(1, 3), st.integers(0, 2**31 - 1))
@settings(max_examples=40, deadline=None)
def test_gnnhar_matches_loop_oracle(a, layers, seed):
    rng = np.random.default_rng(seed)
    n = a.shape[0]
    p = _gnn(rng, n, layers)
    v = rng.random((n, 3))
    w = normalize(a)
    np.testing.assert_allclose(gnnhar_forward(v, w, p), naive_forward(v, w, p.alpha, p.beta, p.layers, p.gamma),
                               rtol=1e-10, atol=1e-12)


def test_batched_forward_matches_per_day(rng):
    a = ring(6)
    ops = GraphOperators.from_adjacency(a)
    p = _gnn(rng, 6, 2)
    v = rng.random((5, 6, 3))
    batch = forecast(p, v, ops)
    for t in range(5):
        np.testing.assert_allclose(batch[t], forecast(p, v[t], ops), rtol=1e-14)


def test_empty_graph_gnn_reduces_to_har(rng):
    ops = GraphOperators.from_adjacency(np.zeros((4, 4), dtype=int))
    p = _gnn(rng, 4, 2)
    v = rng.random((4, 3))
    np.testing.assert_array_equal(forecast(p, v, ops), p.alpha + v @ p.beta)


@pytest.mark.parametrize("layers", [1, 2, 3])
def test_receptive_field_matches_bfs(rng, layers):
    for _ in range(10):
        a = random_graph(rng, 12, 0.2)
        p = _gnn(rng, 12, layers)
        node = int(rng.integers(12))
        assert receptive_field_check(p, a, node) == bfs_hops(a, node, layers)


def test_params_round_trip(tmp_path, rng):
    for p in (LinearParams(rng.random(3), rng.random(3)),
              LinearParams(rng.random(3), rng.random(3), rng.random(3), rng.random(3), inactive=("delta_d",)),
              _gnn(rng, 3, 2)):
        q = params_from_dict(params_to_dict(p))
        assert params_to_dict(q) == params_to_dict(p)
        save_params(p, tmp_path / "p.json", window=3)
        assert params_to_dict(load_params(tmp_path / "p.json")) == params_to_dict(p)
