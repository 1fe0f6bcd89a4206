"""Graph value types, validation, BFS subgraph selection and PageRank."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

TARGET_TRAIN = "target-train"
ATTACKER_SEED = "attacker-seed"
EVAL = "eval"
SPLIT_TAGS = (TARGET_TRAIN, ATTACKER_SEED, EVAL)


class ConvergenceError(RuntimeError):
    def __init__(self, residual: float, iterations: int):
        super().__init__(f"no convergence after {iterations} iterations (residual {residual:.3e})")
        self.residual = residual
        self.iterations = iterations


@dataclass(frozen=True, eq=False)
class Graph:
    """Undirected simple graph with node features and an optional class label.

    ``adj`` is stored as a read-only ``uint8`` matrix and ``feats`` as a
    read-only ``float64`` matrix. Use :func:`make_graph` to build one from
    arbitrary array-likes.
    """

    adj: np.ndarray
    feats: np.ndarray
    label: Optional[int] = None

    @property
    def n(self) -> int:
        return int(self.adj.shape[0])

    @property
    def num_edges(self) -> int:
        return int(np.triu(self.adj, 1).sum())

    def degrees(self) -> np.ndarray:
        return self.adj.sum(axis=1).astype(np.int64)

    def with_adj(self, adj: np.ndarray) -> "Graph":
        return make_graph(adj, self.feats, self.label)

    def with_label(self, label: Optional[int]) -> "Graph":
        return replace(self, label=None if label is None else int(label))

    def edge_set(self) -> set[tuple[int, int]]:
        rows, cols = np.nonzero(np.triu(self.adj, 1))
        return set(zip(rows.tolist(), cols.tolist()))


def make_graph(adj, feats, label: Optional[int] = None) -> Graph:
    a = np.array(adj, dtype=np.uint8, copy=True)
    x = np.array(feats, dtype=np.float64, copy=True)
    if x.ndim == 1:
        x = x.reshape(-1, 1)
    a.setflags(write=False)
    x.setflags(write=False)
    return Graph(a, x, None if label is None else int(label))


def graph_from_edges(n: int, edges, feats=None, label: Optional[int] = None) -> Graph:
    adj = np.zeros((n, n), dtype=np.uint8)
    for i, j in edges:
        if i != j:
            adj[i, j] = adj[j, i] = 1
    if feats is None:
        feats = np.ones((n, 1))
    return make_graph(adj, feats, label)


def validate_graph(g: Graph, num_classes: Optional[int] = None) -> Optional[str]:
    """Return ``None`` when ``g`` is valid, else the name of the first broken invariant."""
    a = np.asarray(g.adj)
    if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] < 1:
        return "non-square"
    if not np.isin(a, (0, 1)).all():
        return "non-binary"
    if not np.array_equal(a, a.T):
        return "asymmetric"
    if np.any(np.diag(a)):
        return "self-loop"
    x = np.asarray(g.feats)
    if x.ndim != 2 or x.shape[0] != a.shape[0]:
        return "feature-rows"
    if not np.isfinite(x).all():
        return "non-finite-features"
    if g.label is not None:
        if g.label < 0 or (num_classes is not None and g.label >= num_classes):
            return "label-range"
    return None


@dataclass(frozen=True, eq=False)
class Dataset:
    graphs: tuple[Graph, ...]
    num_classes: int
    feat_dim: int
    splits: Optional[tuple[str, ...]] = None

    def __len__(self) -> int:
        return len(self.graphs)

    def split(self, tag: str) -> list[Graph]:
        if self.splits is None:
            raise ValueError("dataset has no split assignment")
        return [g for g, t in zip(self.graphs, self.splits) if t == tag]

    def split_indices(self, tag: str) -> list[int]:
        if self.splits is None:
            raise ValueError("dataset has no split assignment")
        return [i for i, t in enumerate(self.splits) if t == tag]

    def labels(self) -> np.ndarray:
        return np.array([-1 if g.label is None else g.label for g in self.graphs])

    def check(self) -> Optional[str]:
        for k, g in enumerate(self.graphs):
            problem = validate_graph(g, self.num_classes)
            if problem:
                return f"graph {k}: {problem}"
            if g.feats.shape[1] != self.feat_dim:
                return f"graph {k}: feature width {g.feats.shape[1]} != {self.feat_dim}"
        if self.splits is not None:
            if len(self.splits) != len(self.graphs):
                return "split length mismatch"
            if any(t not in SPLIT_TAGS for t in self.splits):
                return "unknown split tag"
        return None


@dataclass(frozen=True)
class SubgraphSelection:
    nodes: tuple[int, ...]
    host: int = -1


@dataclass
class PairRegistry:
    """Unordered pairs of seed-graph indices already consumed by mixup."""

    used: set[frozenset] = field(default_factory=set)

    def __contains__(self, pair) -> bool:
        return frozenset(pair) in self.used

    def add(self, i: int, j: int) -> None:
        key = frozenset((i, j))
        if key in self.used:
            raise ValueError(f"pair {(i, j)} already recorded")
        self.used.add(key)

    def reset(self) -> None:
        self.used.clear()

    def __len__(self) -> int:
        return len(self.used)


def neighbors(g: Graph, v: int) -> np.ndarray:
    return np.flatnonzero(g.adj[v])


def induced_subgraph_bfs(g: Graph, center: int, size: int, rng: np.random.Generator) -> SubgraphSelection:
    """Breadth-first expansion from ``center`` until ``size`` nodes are collected.

    Frontier order is shuffled level by level. If the component of ``center``
    is smaller than ``size`` the whole component is returned.
    """
    if not 0 <= center < g.n:
        raise IndexError(f"center {center} out of range for n={g.n}")
    if size < 1:
        raise ValueError("size must be positive")
    order = [int(center)]
    seen = {int(center)}
    frontier = [int(center)]
    while frontier and len(order) < size:
        nxt = []
        for u in rng.permutation(frontier):
            nbrs = [int(w) for w in neighbors(g, int(u)) if int(w) not in seen]
            for w in rng.permutation(nbrs) if nbrs else ():
                w = int(w)
                seen.add(w)
                order.append(w)
                nxt.append(w)
                if len(order) == size:
                    return SubgraphSelection(tuple(order))
        frontier = nxt
    return SubgraphSelection(tuple(order))


def is_connected_selection(g: Graph, nodes: Sequence[int]) -> bool:
    nodes = list(nodes)
    if not nodes:
        return False
    inside = set(nodes)
    seen = {nodes[0]}
    stack = [nodes[0]]
    while stack:
        u = stack.pop()
        for w in neighbors(g, u):
            w = int(w)
            if w in inside and w not in seen:
                seen.add(w)
                stack.append(w)
    return len(seen) == len(inside)


def pagerank(g: Graph, damping: float = 0.85, tol: float = 1e-12, max_iter: int = 1000) -> np.ndarray:
    """PageRank by power iteration with uniform teleport.

    Mass sitting on degree-0 nodes is spread uniformly. Converged when the L1
    change between iterates drops below ``tol``.
    """
    if not 0 < damping < 1:
        raise ValueError("damping must lie in (0, 1)")
    if tol <= 0:
        raise ValueError("tol must be positive")
    n = g.n
    a = g.adj.astype(np.float64)
    deg = a.sum(axis=1)
    dangling = deg == 0
    inv = np.where(dangling, 0.0, 1.0 / np.where(dangling, 1.0, deg))
    # column-stochastic transition over non-dangling nodes
    trans = (a * inv[:, None]).T
    r = np.full(n, 1.0 / n)
    residual = np.inf
    for _ in range(max_iter):
        new = damping * (trans @ r + r[dangling].sum() / n) + (1.0 - damping) / n
        residual = float(np.abs(new - r).sum())
        r = new
        if residual < tol:
            return r / r.sum()
    raise ConvergenceError(residual, max_iter)


def make_splits(ds: Dataset, seed_fraction: float, rng: np.random.Generator,
                train_fraction: float = 0.8) -> Dataset:
    """Assign every graph to target-train, attacker-seed or eval.

    Counts are ``round(train_fraction * N)`` and ``round(seed_fraction * N)``;
    eval gets the rest. When each class has at least ``1 / seed_fraction``
    members the assignment is stratified: within each class the graphs are
    shuffled and spread evenly over [0, 1), and the split is cut along that
    order, so every class lands in the seed pool.
    """
    if not 0 < seed_fraction <= 0.2:
        raise ValueError("seed_fraction must lie in (0, 0.2]")
    total = len(ds.graphs)
    n_train = int(round(train_fraction * total))
    n_seed = int(round(seed_fraction * total))
    if n_seed < 1 or n_train + n_seed > total:
        raise ValueError(f"dataset of {total} graphs too small for seed_fraction={seed_fraction}")
    labels = ds.labels()
    classes, counts = np.unique(labels, return_counts=True)
    stratify = labels.min() >= 0 and counts.min() >= 1.0 / seed_fraction
    if stratify:
        keys = np.empty(total)
        for c in classes:
            members = np.flatnonzero(labels == c)
            perm = rng.permutation(members)
            keys[perm] = (np.arange(len(perm)) + 0.5) / len(perm)
        order = np.lexsort((rng.random(total), keys))
    else:
        order = rng.permutation(total)
    tags = np.empty(total, dtype=object)
    tags[order[:n_seed]] = ATTACKER_SEED
    tags[order[n_seed:n_seed + n_train]] = TARGET_TRAIN
    tags[order[n_seed + n_train:]] = EVAL
    return replace(ds, splits=tuple(str(t) for t in tags))
