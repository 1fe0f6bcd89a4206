import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from graphsteal.graph import (ATTACKER_SEED, EVAL, TARGET_TRAIN, ConvergenceError, Dataset, PairRegistry,
                              graph_from_edges, induced_subgraph_bfs, is_connected_selection, make_graph,
                              make_splits, pagerank, validate_graph)
from conftest import random_graph


def test_validate_ok_triangle():
    assert validate_graph(graph_from_edges(3, [(0, 1), (1, 2), (0, 2)])) is None


def test_validate_asymmetric():
    a = np.zeros((3, 3), dtype=np.uint8)
    a[0, 1] = 1
    assert validate_graph(make_graph(a, np.ones((3, 1)))) == "asymmetric"


def test_validate_self_loop():
    a = np.zeros((3, 3), dtype=np.uint8)
    a[2, 2] = 1
    assert validate_graph(make_graph(a, np.ones((3, 1)))) == "self-loop"


def test_validate_other_violations():
    assert validate_graph(make_graph(np.full((2, 2), 2), np.ones((2, 1)))) == "non-binary"
    assert validate_graph(make_graph(np.zeros((2, 2)), np.ones((3, 1)))) == "feature-rows"
    assert validate_graph(make_graph(np.zeros((2, 2)), [[np.nan], [0.0]])) == "non-finite-features"
    assert validate_graph(make_graph(np.zeros((2, 2)), np.ones((2, 1)), 5), num_classes=3) == "label-range"


def test_graph_arrays_are_read_only():
    g = graph_from_edges(2, [(0, 1)])
    with pytest.raises(ValueError):
        g.adj[0, 1] = 0


def test_bfs_path():
    g = graph_from_edges(3, [(0, 1), (1, 2)])
    assert set(induced_subgraph_bfs(g, 0, 2, np.random.default_rng(0)).nodes) == {0, 1}


def test_bfs_singleton():
    g = random_graph(np.random.default_rng(1), 7)
    assert induced_subgraph_bfs(g, 4, 1, np.random.default_rng(0)).nodes == (4,)


def test_bfs_component_exhaustion():
    g = graph_from_edges(5, [(0, 1), (1, 2), (3, 4)])
    assert set(induced_subgraph_bfs(g, 1, 5, np.random.default_rng(0)).nodes) == {0, 1, 2}


def test_bfs_center_out_of_range():
    with pytest.raises(IndexError):
        induced_subgraph_bfs(graph_from_edges(2, [(0, 1)]), 2, 1, np.random.default_rng(0))


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10_000), st.integers(2, 14), st.integers(1, 14))
def test_bfs_connected_prefix_in_level_order(seed, n, size):
    rng = np.random.default_rng(seed)
    g = random_graph(rng, n, 0.3)
    center = int(rng.integers(n))
    nodes = induced_subgraph_bfs(g, center, size, rng).nodes
    assert nodes[0] == center and len(set(nodes)) == len(nodes) <= size
    assert is_connected_selection(g, nodes)
    # BFS distances along the returned order never decrease
    dist = {center: 0}
    frontier = [center]
    while frontier:
        nxt = []
        for u in frontier:
            for w in np.flatnonzero(g.adj[u]):
                if int(w) not in dist:
                    dist[int(w)] = dist[u] + 1
                    nxt.append(int(w))
        frontier = nxt
    assert all(dist[a] <= dist[b] for a, b in zip(nodes, nodes[1:]))
    if len(nodes) < size:
        assert set(nodes) == set(dist)


def _oracle_pagerank(adj, damping=0.85):
    # dense Google matrix, iterated to a 1e-14 residual
    n = len(adj)
    deg = adj.sum(axis=1)
    m = np.where(deg[:, None] > 0, adj / np.maximum(deg, 1)[:, None], 1.0 / n)
    google = damping * m + (1 - damping) / n
    x = np.full(n, 1.0 / n)
    for _ in range(10_000):
        nxt = x @ google
        if np.abs(nxt - x).sum() < 1e-14:
            return nxt
        x = nxt
    return x


def test_pagerank_cycle_uniform():
    g = graph_from_edges(4, [(0, 1), (1, 2), (2, 3), (3, 0)])
    assert np.array_equal(pagerank(g), np.full(4, 0.25))


def test_pagerank_star_matches_oracle():
    g = graph_from_edges(4, [(0, 1), (0, 2), (0, 3)])
    pr = pagerank(g)
    np.testing.assert_allclose(pr, _oracle_pagerank(g.adj.astype(float)), atol=1e-10)
    assert pr[0] > pr[1] and pr[1] == pytest.approx(pr[2]) == pytest.approx(pr[3])


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 20))
def test_pagerank_matches_oracle_random(seed, n):
    g = random_graph(np.random.default_rng(seed), n, 0.2)
    pr = pagerank(g)
    assert abs(pr.sum() - 1.0) < 1e-10
    assert np.abs(pr - _oracle_pagerank(g.adj.astype(float))).max() <= 1e-8


def test_pagerank_non_convergence():
    g = graph_from_edges(5, [(0, 1), (1, 2)])
    with pytest.raises(ConvergenceError) as info:
        pagerank(g, tol=1e-15, max_iter=2)
    assert info.value.residual > 0


def test_pagerank_bad_arguments():
    g = graph_from_edges(2, [(0, 1)])
    with pytest.raises(ValueError):
        pagerank(g, damping=1.0)
    with pytest.raises(ValueError):
        pagerank(g, tol=0.0)


def test_pair_registry():
    reg = PairRegistry()
    reg.add(3, 1)
    assert (1, 3) in reg and (3, 1) in reg and (1, 2) not in reg
    with pytest.raises(ValueError):
        reg.add(1, 3)
    reg.reset()
    assert len(reg) == 0


def _toy_dataset(counts):
    graphs = []
    for c, k in enumerate(counts):
        graphs += [graph_from_edges(3, [(0, 1)], label=c) for _ in range(k)]
    return Dataset(tuple(graphs), len(counts), 1)


def test_make_splits_sizes_and_strata():
    ds = make_splits(_toy_dataset([40, 40, 20]), 0.1, np.random.default_rng(0))
    assert ds.check() is None
    tags = np.array(ds.splits)
    assert (tags == ATTACKER_SEED).sum() == 10 and (tags == TARGET_TRAIN).sum() == 80 and (tags == EVAL).sum() == 10
    seed_labels = ds.labels()[tags == ATTACKER_SEED]
    assert sorted(np.bincount(seed_labels).tolist()) == [2, 4, 4]


def test_make_splits_deterministic():
    ds = _toy_dataset([30, 30])
    a = make_splits(ds, 0.1, np.random.default_rng(7)).splits
    b = make_splits(ds, 0.1, np.random.default_rng(7)).splits
    assert a == b
