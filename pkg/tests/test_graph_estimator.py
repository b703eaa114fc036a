import math

import numpy as np
import pytest

from conftest import check_model_gradients
from t2g_toolkit.core import autodiff as ad
from t2g_toolkit.core.autodiff import Value
from t2g_toolkit.nn.graph_estimator import (
    GraphEstimator,
    assemble,
    edge_weight_scores,
    hard_topology,
    merge_heads,
    split_heads,
)


def random_estimator(rng: np.random.Generator):
    n_heads = int(rng.choice([1, 2, 4]))
    kwargs = dict(
        weight_symmetry=str(rng.choice(["S", "A"])),
        topology_symmetry=str(rng.choice(["S", "A"])),
        topology_mode=str(rng.choice(["knowledge", "adaptive", "free", "all_ones"])),
        self_loops=bool(rng.random() < 0.3),
        d_col=int(rng.integers(1, 5)),
    )
    n_features = int(rng.integers(1, 9))
    d_token = n_heads * int(rng.integers(1, 5))
    estimator = GraphEstimator(n_features, d_token, n_heads, rng, **kwargs)
    # Spread the bias so both dense and sparse topologies show up
    if estimator.bias is not None:
        estimator.bias.data[:] = rng.normal(0.0, 1.0, estimator.bias.shape)
    x = Value(rng.standard_normal((int(rng.integers(1, 5)), n_features, d_token)))
    return estimator, x, kwargs


def test_graph_properties_on_random_estimators(float64):
    rng = np.random.default_rng(2024)
    for _ in range(1000):
        estimator, x, kwargs = random_estimator(rng)
        fr = estimator(x)
        g = fr.graph.data
        a = fr.adjacency.data
        n = estimator.n_features

        sums = g.sum(axis=-1)
        empty = ~fr.allowed.any(axis=-1)
        empty = np.broadcast_to(empty, sums.shape)
        np.testing.assert_allclose(sums[~empty], 1.0, atol=1e-6)
        assert np.all(g[np.broadcast_to(empty[..., None], g.shape)] == 0.0)

        # Support of G sits inside the hard topology
        assert not np.any((g > 0) & ~np.broadcast_to(fr.allowed, g.shape))
        assert set(np.unique(a)) <= {0.0, 1.0}
        if not kwargs["self_loops"]:
            assert np.all(np.diagonal(g, axis1=-2, axis2=-1) == 0.0)

        if kwargs["weight_symmetry"] == "S":
            w = fr.edge_weights.data
            np.testing.assert_allclose(w, np.swapaxes(w, -1, -2), atol=1e-12)
        symmetric_topology = (
            kwargs["topology_symmetry"] == "S" and kwargs["topology_mode"] in ("knowledge", "free")
        ) or (kwargs["topology_mode"] == "adaptive" and kwargs["weight_symmetry"] == "S")
        if symmetric_topology:
            assert np.array_equal(a, np.swapaxes(a, -1, -2))
        if kwargs["topology_mode"] in ("knowledge", "free", "all_ones"):
            assert a.shape[-2:] == (n, n) and a.ndim <= 3


def test_knowledge_topology_is_batch_independent(float64, rng):
    estimator = GraphEstimator(5, 8, 2, rng, d_col=3)
    first = estimator(Value(rng.standard_normal((3, 5, 8)))).adjacency.data
    second = estimator(Value(10 * rng.standard_normal((7, 5, 8)))).adjacency.data
    assert first.shape == (2, 5, 5)
    np.testing.assert_array_equal(first, second)


def test_edge_weight_scores_formula(float64, rng):
    head = rng.standard_normal((2, 3, 4, 5))
    tail = rng.standard_normal((2, 3, 4, 5))
    relation = rng.standard_normal((3, 1, 5))
    scores = edge_weight_scores(Value(head), Value(tail), Value(relation))
    expected = np.einsum("bhim,hm,bhjm->bhij", head, relation[:, 0], tail) / math.sqrt(5)
    np.testing.assert_allclose(scores.data, expected, rtol=1e-10)


def test_topology_scores_are_cosines(float64, rng):
    estimator = GraphEstimator(4, 8, 2, rng, d_col=3)
    scores = estimator.topology_scores().data
    h = estimator.col_head.data / np.linalg.norm(estimator.col_head.data, axis=-1, keepdims=True)
    t = estimator.col_tail.data / np.linalg.norm(estimator.col_tail.data, axis=-1, keepdims=True)
    np.testing.assert_allclose(scores, h @ np.swapaxes(t, -1, -2), rtol=1e-9, atol=1e-12)
    assert np.all(np.abs(scores) <= 1.0 + 1e-12)


def test_threshold_is_strict():
    zeros = Value(np.zeros((1, 3, 3)))
    adjacency = hard_topology(zeros, Value(np.zeros((1, 1, 1))), 0.5, "knowledge", 3)
    assert np.all(adjacency.data == 0.0)


def test_isolated_node_row_is_zero_and_single_edge_gets_all_mass(float64):
    weights = Value(np.arange(9.0).reshape(1, 1, 3, 3))
    adjacency = Value(np.array([[[0, 0, 0], [1, 0, 0], [1, 1, 0]]], dtype=float))
    graph = assemble(weights, adjacency).data[0, 0]
    np.testing.assert_array_equal(graph[0], [0.0, 0.0, 0.0])
    np.testing.assert_array_equal(graph[1], [1.0, 0.0, 0.0])
    assert graph[2, 2] == 0.0
    np.testing.assert_allclose(graph[2].sum(), 1.0)


def test_all_ones_has_no_topology_parameters(float64, rng):
    estimator = GraphEstimator(4, 8, 2, rng, topology_mode="all_ones")
    assert estimator.topology_parameters() == []
    fr = estimator(Value(rng.standard_normal((2, 4, 8))))
    np.testing.assert_array_equal(fr.allowed, ~np.eye(4, dtype=bool))


def test_plain_estimator_is_dot_product_attention(float64, rng):
    estimator = GraphEstimator(4, 6, 2, rng, plain=True)
    assert estimator.relation is None and estimator.tail_proj is not estimator.head_proj
    x = rng.standard_normal((3, 4, 6))
    fr = estimator(Value(x))

    q = (x @ estimator.head_proj.weight.data + estimator.head_proj.bias.data).reshape(3, 4, 2, 3).transpose(0, 2, 1, 3)
    k = (x @ estimator.tail_proj.weight.data + estimator.tail_proj.bias.data).reshape(3, 4, 2, 3).transpose(0, 2, 1, 3)
    logits = q @ np.swapaxes(k, -1, -2) / math.sqrt(3)
    expected = np.exp(logits - logits.max(-1, keepdims=True))
    expected /= expected.sum(-1, keepdims=True)
    np.testing.assert_allclose(fr.graph.data, expected, rtol=1e-10)


def test_weight_symmetry_shares_the_projection(rng):
    shared = GraphEstimator(4, 8, 2, rng, weight_symmetry="S")
    separate = GraphEstimator(4, 8, 2, rng, weight_symmetry="A")
    assert shared.tail_proj is shared.head_proj
    assert len(separate.parameters()) - len(shared.parameters()) == 2


def test_topology_symmetry_shares_the_column_embedding(rng):
    estimator = GraphEstimator(4, 8, 2, rng, topology_symmetry="S", d_col=3)
    assert estimator.col_tail is estimator.col_head
    assert estimator.col_head.group == "column_embedding"
    assert estimator.bias.group == "backbone"


def test_freeze_caches_the_knowledge_topology(float64, rng):
    estimator = GraphEstimator(5, 8, 2, rng, d_col=3)
    before = estimator.adjacency().data.copy()
    estimator.freeze()
    assert all(not p.trainable for p in estimator.topology_parameters())

    estimator.col_head.data[:] = rng.standard_normal(estimator.col_head.shape)
    estimator.bias.data[:] = 5.0
    np.testing.assert_array_equal(estimator.adjacency().data, before)

    estimator.refresh_frozen()
    assert np.all(estimator.adjacency().data == 1.0)


def test_freeze_leaves_adaptive_topology_sample_dependent(float64, rng):
    estimator = GraphEstimator(4, 8, 2, rng, topology_mode="adaptive")
    estimator.freeze()
    fr = estimator(Value(rng.standard_normal((3, 4, 8))))
    assert fr.adjacency.shape == (3, 2, 4, 4)
    assert not estimator.bias.trainable


def test_adaptive_needs_edge_weights(rng):
    with pytest.raises(ValueError, match="adaptive"):
        GraphEstimator(3, 4, 1, rng, topology_mode="adaptive").adjacency()


def test_head_split_and_merge_are_inverse(float64, rng):
    x = rng.standard_normal((2, 5, 12))
    heads = split_heads(Value(x), 3)
    assert heads.shape == (2, 3, 5, 4)
    np.testing.assert_array_equal(heads.data[:, 1], x[:, :, 4:8])
    np.testing.assert_array_equal(merge_heads(heads).data, x)


@pytest.mark.parametrize("mode", ["knowledge", "free", "adaptive"])
def test_gradients_through_straight_through_topology(float64, mode):
    rng = np.random.default_rng(5)
    estimator = GraphEstimator(4, 8, 2, rng, topology_mode=mode, topology_symmetry="A", d_col=3)
    x = Value(rng.standard_normal((3, 4, 8)))
    projection = Value(rng.standard_normal((3, 2, 4, 4)))

    def objective():
        return ad.sum(ad.mul(estimator(x).graph, projection))

    check_model_gradients(objective, estimator.parameters())


def test_hand_evaluated_edge_weight(float64):
    m = 4
    token = np.zeros(m)
    token[0] = math.sqrt(m)
    encoded = Value(np.stack([token, token])[None, None])
    scores = edge_weight_scores(encoded, encoded, Value(np.ones((1, 1, m))))
    assert scores.data[0, 0, 0, 1] == pytest.approx(math.sqrt(m), rel=1e-12)
