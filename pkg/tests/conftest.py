import itertools

import numpy as np
import pytest

from graphsteal.gnn import graph_uncertainty, grad_wrt_adjacency
from graphsteal.graph import make_graph

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)


def random_graph(rng, n, p=0.3, d=4, label=None):
    upper = np.triu(rng.random((n, n)) < p, 1).astype(np.uint8)
    return make_graph(upper + upper.T, rng.normal(size=(n, d)), label)


def connected_twin_free_graph(rng, lo=4, hi=12, p=0.25, d=4):
    """Random tree plus extra edges, redrawn until no two nodes share a closed neighbourhood.

    Twins and disconnected pieces produce exact ties in max pooling and the
    SAGE degree floor, where the adjacency derivative does not exist.
    """
    while True:
        n = int(rng.integers(lo, hi + 1))
        adj = np.zeros((n, n), dtype=np.uint8)
        for v in range(1, n):
            u = int(rng.integers(v))
            adj[u, v] = adj[v, u] = 1
        extra = np.triu(rng.random((n, n)) < p, 1)
        adj = np.maximum(adj, (extra | extra.T).astype(np.uint8))
        np.fill_diagonal(adj, 0)
        closed = adj + np.eye(n, dtype=np.uint8)
        if len({row.tobytes() for row in closed}) == n:
            return make_graph(adj, rng.normal(size=(n, d)))


def brute_triangles(adj):
    n = len(adj)
    return sum(1 for i, j, k in itertools.combinations(range(n), 3) if adj[i, j] and adj[j, k] and adj[i, k])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def fd_adjacency_errors(model, g, metric, h=1e-6):
    """Relative errors of the analytic adjacency gradient against central differences.

    The analytic matrix is half the derivative along a symmetric pair change,
    so the pair difference quotient is halved before comparing.
    """
    grad = grad_wrt_adjacency(model, g, metric)
    base = g.adj.astype(np.float64)
    errs = []
    for i in range(g.n):
        for j in range(i + 1, g.n):
            e = np.zeros_like(base)
            e[i, j] = e[j, i] = h
            fd = (graph_uncertainty(model, g, metric, base + e) - graph_uncertainty(model, g, metric, base - e)) / (4 * h)
            a = grad[i, j]
            errs.append(abs(a - fd) / max(abs(a), abs(fd), 1e-6))
    return np.array(errs), grad


def random_biases(model, rng, scale=0.1):
    for k, v in model.params.items():
        if k.startswith("b"):
            model.params[k] = rng.normal(0, scale, size=v.shape)
    return model


def first_flip_oracle(model, g, metric, h=1e-6):
    """Exhaustive first-order check: the legal flip whose directional derivative is largest."""
    base = g.adj.astype(np.float64)
    best, best_val = None, 0.0
    for i in range(g.n):
        for j in range(i + 1, g.n):
            direction = 1.0 if g.adj[i, j] == 0 else -1.0
            e = np.zeros_like(base)
            e[i, j] = e[j, i] = direction * h
            inc = (graph_uncertainty(model, g, metric, base + e) - graph_uncertainty(model, g, metric, base - e)) / (2 * h)
            if inc > best_val:
                best, best_val = (i, j), inc
    return best
