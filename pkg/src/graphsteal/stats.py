"""Structural statistics used to judge how realistic a generated graph is."""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Iterable, Optional

import networkx as nx
import numpy as np
from networkx.algorithms.connectivity import build_auxiliary_node_connectivity, local_node_connectivity
from networkx.algorithms.flow import build_residual_network

from .graph import Graph

STAT_COLUMNS = ("degree_distribution", "triangles", "clustering", "transitivity", "cliques", "connectivity")
EXACT_CONNECTIVITY_MAX_N = 60
CONNECTIVITY_SAMPLE_PAIRS = 200


@dataclass(frozen=True)
class StatVector:
    degree_hist: np.ndarray
    triangles: int
    clustering: float
    transitivity: float
    cliques: int
    connectivity: float


def degree_histogram(g: Graph) -> np.ndarray:
    deg = g.degrees()
    return np.bincount(deg, minlength=1) / g.n


def _triangle_parts(g: Graph):
    a = g.adj.astype(np.int64)
    closed = np.einsum("ij,jk,ki->i", a, a, a) // 2  # triangles through each node
    deg = a.sum(axis=1)
    wedges = deg * (deg - 1) // 2
    return closed, wedges


def triangle_count(g: Graph) -> int:
    closed, _ = _triangle_parts(g)
    return int(closed.sum() // 3)


def clustering(g: Graph) -> float:
    closed, wedges = _triangle_parts(g)
    local = np.divide(closed, wedges, out=np.zeros(g.n), where=wedges > 0)
    return float(local.mean())


def transitivity(g: Graph) -> float:
    closed, wedges = _triangle_parts(g)
    total = wedges.sum()
    return float(closed.sum() / total) if total else 0.0


def maximal_cliques(g: Graph) -> Iterable[frozenset]:
    """Bron-Kerbosch with Tomita pivoting; isolated nodes are 1-cliques."""
    nbrs = [set(np.flatnonzero(g.adj[v]).tolist()) for v in range(g.n)]

    def expand(r, p, x):
        if not p and not x:
            yield frozenset(r)
            return
        pivot = max(p | x, key=lambda u: len(p & nbrs[u]))
        for v in list(p - nbrs[pivot]):
            yield from expand(r | {v}, p & nbrs[v], x & nbrs[v])
            p = p - {v}
            x = x | {v}

    yield from expand(set(), set(range(g.n)), set())


def clique_count(g: Graph) -> int:
    return sum(1 for _ in maximal_cliques(g))


def to_networkx(g: Graph) -> nx.Graph:
    G = nx.Graph()
    G.add_nodes_from(range(g.n))
    G.add_edges_from(g.edge_set())
    return G


def average_connectivity(g: Graph, rng: Optional[np.random.Generator] = None) -> float:
    """Mean local node connectivity over unordered node pairs.

    Exact up to ``EXACT_CONNECTIVITY_MAX_N`` nodes; above that the mean is
    estimated from ``CONNECTIVITY_SAMPLE_PAIRS`` uniformly drawn pairs.
    """
    if g.n < 2:
        return 0.0
    G = to_networkx(g)
    aux = build_auxiliary_node_connectivity(G)
    residual = build_residual_network(aux, "capacity")
    if g.n <= EXACT_CONNECTIVITY_MAX_N:
        pairs = itertools.combinations(range(g.n), 2)
    else:
        rng = rng if rng is not None else np.random.default_rng(0)
        pairs = []
        for _ in range(CONNECTIVITY_SAMPLE_PAIRS):
            u, v = rng.choice(g.n, size=2, replace=False)
            pairs.append((int(u), int(v)))
    values = [local_node_connectivity(G, u, v, auxiliary=aux, residual=residual) for u, v in pairs]
    return float(np.mean(values))


def stat_vector(g: Graph, with_connectivity: bool = True) -> StatVector:
    return StatVector(
        degree_hist=degree_histogram(g),
        triangles=triangle_count(g),
        clustering=clustering(g),
        transitivity=transitivity(g),
        cliques=clique_count(g),
        connectivity=average_connectivity(g) if with_connectivity else 0.0,
    )


def degree_distribution_distance(g1: Graph, g2: Graph) -> float:
    """Total-variation distance between the normalised degree histograms."""
    return _tv(degree_histogram(g1), degree_histogram(g2))


def _tv(h1: np.ndarray, h2: np.ndarray) -> float:
    size = max(len(h1), len(h2))
    a = np.pad(h1, (0, size - len(h1)))
    b = np.pad(h2, (0, size - len(h2)))
    # rounding can push disjoint histograms a hair past 1
    return min(float(0.5 * np.abs(a - b).sum()), 1.0)


_STAT_FUNCS = {
    "triangles": lambda g: float(triangle_count(g)),
    "clustering": clustering,
    "transitivity": transitivity,
    "cliques": lambda g: float(clique_count(g)),
    "connectivity": average_connectivity,
}


def stat_gap(g: Graph, g_prime: Graph, which: Optional[Iterable[str]] = None) -> dict[str, float]:
    """Absolute per-statistic differences; degree uses the TV distance."""
    which = STAT_COLUMNS if which is None else tuple(which)
    out = {}
    for name in which:
        if name == "degree_distribution":
            out[name] = degree_distribution_distance(g, g_prime)
        elif name in _STAT_FUNCS:
            f = _STAT_FUNCS[name]
            out[name] = abs(f(g) - f(g_prime))
        else:
            raise ValueError(f"unknown statistic {name!r}")
    return out
