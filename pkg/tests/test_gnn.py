import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from graphsteal.gnn import (ModelConfig, TrainingError, fit, forward, grad_wrt_adjacency, init_model,
                            load_checkpoint, loss_and_param_grads, param_shapes, predict_hard,
                            predict_proba, save_checkpoint)
from graphsteal.graph import graph_from_edges, make_graph
from conftest import connected_twin_free_graph, fd_adjacency_errors, random_biases, random_graph

KINDS = ("gcn", "sage", "gin")
POOLS = ("average", "sum", "maximum")


def test_init_deterministic_and_shapes():
    cfg = ModelConfig("gcn", 3, 8, "average", 3, 4)
    a = init_model(cfg, np.random.default_rng(5))
    b = init_model(cfg, np.random.default_rng(5))
    assert np.array_equal(a.flat_params(), b.flat_params())
    assert cfg.head_width == 28
    assert a.params["W_out"].shape == (28, 3)
    assert all(not a.params[k].any() for k, shape in param_shapes(cfg) if len(shape) == 1)
    for k, shape in param_shapes(cfg):
        if len(shape) == 2:
            assert np.abs(a.params[k]).max() <= math.sqrt(6 / sum(shape))


def test_config_validation():
    with pytest.raises(ValueError):
        ModelConfig("gat")
    with pytest.raises(ValueError):
        ModelConfig(pooling="median")
    with pytest.raises(ValueError):
        ModelConfig(num_layers=0)
    assert ModelConfig(layer_kind="GraphSAGE", pooling="mean").layer_kind == "sage"
    assert ModelConfig.wide_preset().hidden_width == 128


@pytest.mark.parametrize("kind", KINDS)
@pytest.mark.parametrize("pool", POOLS)
def test_zero_params_uniform(kind, pool):
    m = init_model(ModelConfig(kind, 2, 5, pool, 4, 3), np.random.default_rng(0))
    m.zero_params()
    g = random_graph(np.random.default_rng(1), 6, d=3)
    np.testing.assert_allclose(forward(m, g).probs, np.full(4, 0.25))
    assert predict_hard(m, g) == 0


def test_gcn_isolated_node_identity_normalisation():
    m = init_model(ModelConfig("gcn", 1, 3, "average", 2, 2), np.random.default_rng(0))
    m.params["b1"] = np.array([0.1, -0.2, 0.3])
    g = make_graph([[0]], [[0.5, -1.0]])
    expected = np.maximum(np.array([0.5, -1.0]) @ m.params["W1"] + m.params["b1"], 0)
    np.testing.assert_allclose(forward(m, g).embeddings[1][0], expected)


def test_two_node_hand_computed():
    # A+I is all ones, degrees 2, so the GCN operator averages the two rows.
    # h1 = relu(0.5 * (1 + 3) * 2) = 4 on both nodes; pooled [h0, h1] = [2, 4].
    m = init_model(ModelConfig("gcn", 1, 1, "average", 2, 1), np.random.default_rng(0))
    m.params.update(W1=np.array([[2.0]]), b1=np.zeros(1), W_out=np.eye(2), b_out=np.zeros(2))
    g = graph_from_edges(2, [(0, 1)], feats=[[1.0], [3.0]])
    p = forward(m, g).probs
    np.testing.assert_allclose(p, [1 / (1 + math.e ** 2), math.e ** 2 / (1 + math.e ** 2)], rtol=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from(KINDS), st.sampled_from(POOLS))
def test_probabilities_are_distributions(seed, kind, pool):
    rng = np.random.default_rng(seed)
    m = init_model(ModelConfig(kind, 2, 6, pool, 3, 4), rng)
    graphs = [random_graph(rng, int(rng.integers(1, 10))) for _ in range(4)]
    p = predict_proba(m, graphs)
    assert np.all(p >= 0) and np.all(p <= 1)
    np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-9)
    single = np.array([forward(m, g).probs for g in graphs])
    np.testing.assert_allclose(p, single, atol=1e-12)


def test_feature_width_mismatch():
    m = init_model(ModelConfig("gcn", 1, 2, "average", 2, 3), np.random.default_rng(0))
    with pytest.raises(ValueError):
        forward(m, random_graph(np.random.default_rng(0), 4, d=2))


def test_grad_zero_params_is_zero():
    m = init_model(ModelConfig("gin", 2, 4, "sum", 3, 4), np.random.default_rng(0))
    m.zero_params()
    g = random_graph(np.random.default_rng(0), 6)
    assert not grad_wrt_adjacency(m, g, "entropy").any()


@pytest.mark.parametrize("kind", KINDS)
def test_grad_respects_cycle_symmetry(kind):
    rng = np.random.default_rng(3)
    m = random_biases(init_model(ModelConfig(kind, 2, 5, "average", 3, 2), rng), rng)
    g = graph_from_edges(4, [(0, 1), (1, 2), (2, 3), (3, 0)], feats=np.ones((4, 2)))
    grad = grad_wrt_adjacency(m, g, "entropy")
    edges = [grad[0, 1], grad[1, 2], grad[2, 3], grad[0, 3]]
    diagonals = [grad[0, 2], grad[1, 3]]
    assert np.ptp(edges) < 1e-9 and np.ptp(diagonals) < 1e-9
    np.testing.assert_allclose(grad, grad.T)
    assert not np.diag(grad).any()


@pytest.mark.parametrize("kind", KINDS)
@pytest.mark.parametrize("metric", ("margin", "max", "entropy"))
def test_grad_matches_finite_differences(kind, metric):
    rng = np.random.default_rng(11)
    for pool in POOLS:
        m = random_biases(init_model(ModelConfig(kind, 3, 6, pool, 3, 4), rng), rng)
        g = connected_twin_free_graph(rng, 8, 8)
        errs, _ = fd_adjacency_errors(m, g, metric)
        assert errs.max() < 1e-3, (pool, errs.max())


def test_grad_at_relaxed_adjacency():
    rng = np.random.default_rng(2)
    m = random_biases(init_model(ModelConfig("gcn", 2, 5, "average", 3, 4), rng), rng)
    g = connected_twin_free_graph(rng, 6, 6)
    r = np.triu(rng.uniform(0.2, 0.8, size=(6, 6)), 1)
    r = r + r.T
    from graphsteal.gnn import graph_uncertainty
    grad = grad_wrt_adjacency(m, g, "entropy", relaxed_adj=r)
    h = 1e-6
    e = np.zeros_like(r)
    e[1, 4] = e[4, 1] = h
    fd = (graph_uncertainty(m, g, "entropy", r + e) - graph_uncertainty(m, g, "entropy", r - e)) / (4 * h)
    assert grad[1, 4] == pytest.approx(fd, rel=1e-5)


@pytest.mark.parametrize("kind", KINDS)
def test_param_grads_match_finite_differences(kind):
    rng = np.random.default_rng(4)
    m = random_biases(init_model(ModelConfig(kind, 2, 3, "average", 3, 2), rng), rng)
    graphs = [connected_twin_free_graph(rng, 4, 7, d=2) for _ in range(3)]
    labels = [0, 2, 1]
    _, grads = loss_and_param_grads(m, graphs, labels)
    h = 1e-6
    for name, value in m.params.items():
        for idx in np.ndindex(value.shape):
            orig = value[idx]
            value[idx] = orig + h
            up, _ = loss_and_param_grads(m, graphs, labels)
            value[idx] = orig - h
            down, _ = loss_and_param_grads(m, graphs, labels)
            value[idx] = orig
            fd = (up - down) / (2 * h)
            a = grads[name][idx]
            assert abs(a - fd) / max(abs(a), abs(fd), 1e-6) < 1e-4, (name, idx, a, fd)


def test_fit_memorises_single_graph():
    rng = np.random.default_rng(0)
    m = init_model(ModelConfig("gcn", 3, 16, "average", 3, 4), rng)
    g = random_graph(rng, 7)
    log = fit(m, [(g, 2)], 200, 0.01, rng)
    assert len(log) == 200 and log[-1] < 0.01
    assert predict_hard(m, g) == 2


def test_fit_zero_epochs_unchanged():
    rng = np.random.default_rng(0)
    m = init_model(ModelConfig("sage", 2, 4, "sum", 2, 4), rng)
    before = m.flat_params()
    assert fit(m, [(random_graph(rng, 5), 1)], 0, 0.01, rng) == []
    assert np.array_equal(before, m.flat_params())


def test_fit_separable_toy_reaches_full_accuracy():
    # class 1 graphs are paths with feature 1, class 0 graphs are stars with feature -1
    rng = np.random.default_rng(1)
    pool = []
    for k in range(20):
        n = 4 + k % 4
        if k % 2:
            pool.append((graph_from_edges(n, [(i, i + 1) for i in range(n - 1)], feats=np.ones((n, 1))), 1))
        else:
            pool.append((graph_from_edges(n, [(0, i) for i in range(1, n)], feats=-np.ones((n, 1))), 0))
    m = init_model(ModelConfig("gin", 2, 8, "average", 2, 1), rng)
    fit(m, pool, 500, 0.01, rng)
    preds = [predict_hard(m, g) for g, _ in pool]
    assert preds == [y for _, y in pool]


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_fit_errors():
    rng = np.random.default_rng(0)
    m = init_model(ModelConfig("gcn", 1, 2, "average", 2, 4), rng)
    with pytest.raises(ValueError):
        fit(m, [], 1, 0.01, rng)
    with pytest.raises(ValueError):
        fit(m, [(random_graph(rng, 4), 5)], 1, 0.01, rng)
    g = random_graph(rng, 4)
    m.params["W_out"][:] = np.inf
    with pytest.raises(TrainingError) as info:
        fit(m, [(g, 0)], 3, 0.01, rng)
    assert info.value.epoch == 0


def test_checkpoint_round_trip_bit_exact(tmp_path):
    rng = np.random.default_rng(0)
    m = init_model(ModelConfig("gin", 2, 4, "maximum", 3, 4), rng)
    fit(m, [(random_graph(rng, 5), 1), (random_graph(rng, 6), 2)], 3, 0.01, rng)
    path = save_checkpoint(m, tmp_path / "m.npz")
    back = load_checkpoint(path)
    assert back.config == m.config
    assert np.array_equal(back.flat_params(), m.flat_params())
    assert back.adam.step == m.adam.step
    for k in m.params:
        assert np.array_equal(back.adam.m[k], m.adam.m[k]) and np.array_equal(back.adam.v[k], m.adam.v[k])
    # resuming from the reload matches resuming in memory
    pool = [(random_graph(np.random.default_rng(9), 5), 0)]
    fit(m, pool, 2, 0.01, np.random.default_rng(3))
    fit(back, pool, 2, 0.01, np.random.default_rng(3))
    assert np.array_equal(back.flat_params(), m.flat_params())
