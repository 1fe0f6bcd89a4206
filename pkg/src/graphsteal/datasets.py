"""TU-format ingestion and export, plus synthetic desk-scale datasets."""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .graph import Dataset, Graph, make_graph


class TuFormatError(ValueError):
    def __init__(self, path, line: Optional[int], msg: str):
        where = f"{path}:{line}" if line is not None else str(path)
        super().__init__(f"{where}: {msg}")
        self.path = str(path)
        self.line = line


@dataclass(frozen=True)
class TuBundle:
    edges: Path
    graph_indicator: Path
    graph_labels: Path
    node_attributes: Optional[Path] = None
    node_labels: Optional[Path] = None

    @classmethod
    def from_dir(cls, directory, name: Optional[str] = None) -> "TuBundle":
        directory = Path(directory)
        if not directory.is_dir():
            raise FileNotFoundError(f"dataset directory not found: {directory}")
        if name is None:
            hits = sorted(directory.glob("*_A.txt"))
            if len(hits) != 1:
                raise FileNotFoundError(f"expected exactly one *_A.txt in {directory}, found {len(hits)}")
            name = hits[0].name[:-len("_A.txt")]

        def opt(suffix):
            p = directory / f"{name}_{suffix}.txt"
            return p if p.exists() else None

        return cls(directory / f"{name}_A.txt", directory / f"{name}_graph_indicator.txt",
                   directory / f"{name}_graph_labels.txt", opt("node_attributes"), opt("node_labels"))


def _read_rows(path: Path, parse, width: Optional[int] = None) -> list:
    if not Path(path).exists():
        raise FileNotFoundError(f"missing TU file: {path}")
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            parts = [p.strip() for p in line.split(",")]
            if width is not None and len(parts) != width:
                raise TuFormatError(path, lineno, f"expected {width} fields, got {len(parts)}")
            try:
                rows.append([parse(p) for p in parts])
            except ValueError:
                raise TuFormatError(path, lineno, f"non-numeric field in {line!r}") from None
    return rows


def _int(s: str) -> int:
    return int(s)


def load_tu(bundle: TuBundle) -> Dataset:
    """Read a TU bundle into a :class:`Dataset`.

    Edges are symmetrised and deduplicated, self-loops dropped. Without node
    attributes, node labels become one-hot features; with neither, every node
    gets the constant feature 1. Graph classes are remapped to ``0..C-1``.
    """
    indicator = [r[0] for r in _read_rows(bundle.graph_indicator, _int, 1)]
    glabels = [r[0] for r in _read_rows(bundle.graph_labels, _int, 1)]
    num_nodes = len(indicator)
    num_graphs = len(glabels)
    if num_nodes == 0:
        raise TuFormatError(bundle.graph_indicator, None, "no nodes")
    ind = np.asarray(indicator)
    if ind.min() < 1 or ind.max() > num_graphs:
        bad = int(np.flatnonzero((ind < 1) | (ind > num_graphs))[0])
        raise TuFormatError(bundle.graph_indicator, bad + 1, f"graph id {indicator[bad]} outside 1..{num_graphs}")
    if np.any(np.diff(ind) < 0):
        bad = int(np.flatnonzero(np.diff(ind) < 0)[0]) + 2
        raise TuFormatError(bundle.graph_indicator, bad, "nodes are not grouped by graph id")
    sizes = np.bincount(ind, minlength=num_graphs + 1)[1:]
    if np.any(sizes == 0):
        empty = int(np.flatnonzero(sizes == 0)[0]) + 1
        raise TuFormatError(bundle.graph_labels, empty, f"graph {empty} has no nodes")
    starts = np.concatenate([[0], np.cumsum(sizes)[:-1]])

    if bundle.node_attributes is not None:
        feats = np.asarray(_read_rows(bundle.node_attributes, float), dtype=np.float64)
        if len(feats) != num_nodes:
            raise TuFormatError(bundle.node_attributes, None, f"{len(feats)} rows for {num_nodes} nodes")
        if not np.isfinite(feats).all():
            raise TuFormatError(bundle.node_attributes, None, "non-finite attribute")
    elif bundle.node_labels is not None:
        nl = np.asarray([r[0] for r in _read_rows(bundle.node_labels, _int, 1)])
        if len(nl) != num_nodes:
            raise TuFormatError(bundle.node_labels, None, f"{len(nl)} rows for {num_nodes} nodes")
        values, inverse = np.unique(nl, return_inverse=True)
        feats = np.eye(len(values))[inverse]
    else:
        feats = np.ones((num_nodes, 1))

    adjs = [np.zeros((s, s), dtype=np.uint8) for s in sizes]
    with open(bundle.edges, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != 2:
                raise TuFormatError(bundle.edges, lineno, "expected an 'i, j' pair")
            try:
                i, j = int(parts[0]) - 1, int(parts[1]) - 1
            except ValueError:
                raise TuFormatError(bundle.edges, lineno, f"non-numeric field in {line!r}") from None
            if not (0 <= i < num_nodes and 0 <= j < num_nodes):
                raise TuFormatError(bundle.edges, lineno, f"node id out of range 1..{num_nodes}")
            gi = ind[i]
            if ind[j] != gi:
                raise TuFormatError(bundle.edges, lineno, "edge joins nodes of different graphs")
            if i == j:
                continue
            off = starts[gi - 1]
            adjs[gi - 1][i - off, j - off] = 1
            adjs[gi - 1][j - off, i - off] = 1

    classes = sorted(set(glabels))
    remap = {c: k for k, c in enumerate(classes)}
    graphs = tuple(
        make_graph(adjs[k], feats[starts[k]:starts[k] + sizes[k]], remap[glabels[k]])
        for k in range(num_graphs)
    )
    return Dataset(graphs, len(classes), feats.shape[1])


def write_tu(ds: Dataset, directory, name: str = "DS") -> TuBundle:
    """Write ``ds`` as a TU bundle; features always go to ``node_attributes``.

    Reals are written with ``repr`` so they read back bit-exact.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    bundle = TuBundle(directory / f"{name}_A.txt", directory / f"{name}_graph_indicator.txt",
                      directory / f"{name}_graph_labels.txt", directory / f"{name}_node_attributes.txt")
    offset = 0
    with open(bundle.edges, "w", encoding="utf-8") as fa, \
            open(bundle.graph_indicator, "w", encoding="utf-8") as fi, \
            open(bundle.graph_labels, "w", encoding="utf-8") as fl, \
            open(bundle.node_attributes, "w", encoding="utf-8") as fx:
        for gid, g in enumerate(ds.graphs, start=1):
            if g.label is None:
                raise ValueError(f"graph {gid} has no label; TU export needs labels")
            fl.write(f"{g.label}\n")
            for v in range(g.n):
                fi.write(f"{gid}\n")
                fx.write(", ".join(repr(float(x)) for x in g.feats[v]) + "\n")
            rows, cols = np.nonzero(g.adj)
            for i, j in zip(rows.tolist(), cols.tolist()):
                fa.write(f"{i + offset + 1}, {j + offset + 1}\n")
            offset += g.n
    return bundle


def datasets_equal(a: Dataset, b: Dataset, atol: float = 1e-9) -> bool:
    if len(a.graphs) != len(b.graphs) or a.num_classes != b.num_classes:
        return False
    for g, h in zip(a.graphs, b.graphs):
        if g.n != h.n or g.label != h.label or not np.array_equal(g.adj, h.adj):
            return False
        if g.feats.shape != h.feats.shape or not np.allclose(g.feats, h.feats, rtol=0, atol=atol):
            return False
    return True


# --------------------------------------------------------------------------- synthetic data

DEGREE_BUCKETS = 8


def degree_features(adj: np.ndarray, buckets: int = DEGREE_BUCKETS) -> np.ndarray:
    deg = np.asarray(adj).sum(axis=1).astype(np.int64)
    return np.eye(buckets)[np.minimum(deg, buckets - 1)]


def _closes_triangle(adj: np.ndarray, u: int, v: int) -> bool:
    return bool(np.any(adj[u] & adj[v]))


def _triangle_graph(n: int, triangles: int, rng: np.random.Generator, extra_edges: int) -> np.ndarray:
    adj = np.zeros((n, n), dtype=np.uint8)
    nodes = rng.permutation(n)
    for t in range(triangles):
        a, b, c = (int(x) for x in nodes[3 * t:3 * t + 3])
        adj[a, b] = adj[b, a] = adj[a, c] = adj[c, a] = adj[b, c] = adj[c, b] = 1
    # join components; an edge across components never closes a triangle
    comp = list(range(n))

    def root(x):
        while comp[x] != x:
            comp[x] = comp[comp[x]]
            x = comp[x]
        return x

    for u, v in zip(*np.nonzero(np.triu(adj, 1))):
        comp[root(int(u))] = root(int(v))
    order = [int(x) for x in rng.permutation(n)]
    for k in range(1, n):
        u = order[k]
        partners = [w for w in order[:k] if root(w) != root(u)]
        if partners:
            w = partners[int(rng.integers(len(partners)))]
            adj[u, w] = adj[w, u] = 1
            comp[root(u)] = root(w)
    added, tries = 0, 0
    while added < extra_edges and tries < 50 * (extra_edges + 1):
        tries += 1
        u, v = (int(x) for x in rng.choice(n, size=2, replace=False))
        if adj[u, v] or _closes_triangle(adj, u, v):
            continue
        adj[u, v] = adj[v, u] = 1
        added += 1
    return adj


def generate_triangles_like(num_graphs: int, classes: int, nodes_range: Sequence[int],
                            rng: np.random.Generator, buckets: int = DEGREE_BUCKETS,
                            extra_edges: int = 0) -> Dataset:
    """Balanced triangle-counting dataset: class ``c`` graphs hold exactly ``c + 1`` triangles.

    Triangles are planted on disjoint node triples and the graph is joined
    into one component by random edges between components, which can never
    close a triangle. Up to ``extra_edges`` further random edges are added,
    each rejected if it would close a triangle.
    Node features are one-hot degree buckets (degrees >= ``buckets - 1``
    share the last bucket).
    """
    lo, hi = int(nodes_range[0]), int(nodes_range[1])
    if classes < 2:
        raise ValueError("need at least two classes")
    if lo < 3 or hi < lo:
        raise ValueError(f"invalid nodes_range {nodes_range}")
    if lo < 3 * classes:
        raise ValueError(f"nodes_range lower bound {lo} cannot hold {classes} disjoint triangles")
    labels = np.arange(num_graphs) % classes
    labels = labels[rng.permutation(num_graphs)]
    graphs = []
    for c in labels.tolist():
        n = int(rng.integers(lo, hi + 1))
        extra = int(rng.integers(0, extra_edges + 1)) if extra_edges else 0
        adj = _triangle_graph(n, c + 1, rng, extra)
        graphs.append(make_graph(adj, degree_features(adj, buckets), c))
    return Dataset(tuple(graphs), classes, buckets)


def generate_er_matching(ds: Dataset | Sequence[Graph], count: int, rng: np.random.Generator) -> list[Graph]:
    """Random graphs matching the node-count, density and feature pool of ``ds``.

    Node counts are drawn from the empirical distribution, edges i.i.d. with
    the mean density of graphs of that node count, feature rows resampled
    with replacement from all nodes of ``ds``.
    """
    graphs = list(ds.graphs if isinstance(ds, Dataset) else ds)
    if not graphs:
        raise ValueError("reference dataset is empty")
    if count <= 0:
        return []
    sizes = np.array([g.n for g in graphs])
    density = {}
    for n in np.unique(sizes).tolist():
        dens = [2.0 * g.num_edges / (n * (n - 1)) if n > 1 else 0.0 for g in graphs if g.n == n]
        density[n] = float(np.mean(dens))
    pool = np.concatenate([g.feats for g in graphs], axis=0)
    out = []
    for _ in range(count):
        n = int(sizes[int(rng.integers(len(sizes)))])
        upper = np.triu(rng.random((n, n)) < density[n], 1).astype(np.uint8)
        feats = pool[rng.integers(len(pool), size=n)]
        out.append(make_graph(upper + upper.T, feats))
    return out


def default_output_root() -> Path:
    return Path(os.environ.get("GRAPHSTEAL_OUT", "results"))


SHIPPED_ROOT = Path(__file__).with_name("data")


def shipped_datasets() -> dict[str, Path]:
    """Bundled TU datasets by name."""
    return {p.name: p for p in sorted(SHIPPED_ROOT.iterdir()) if p.is_dir()}


def load_shipped(name: str) -> Dataset:
    dirs = shipped_datasets()
    if name not in dirs:
        raise KeyError(f"no shipped dataset {name!r}; available: {sorted(dirs)}")
    return load_tu(TuBundle.from_dir(dirs[name], name))
