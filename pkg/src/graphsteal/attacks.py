"""Query-sample generators: gradient flips, subgraph mixup, their composition and baselines."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from .datasets import generate_er_matching
from .gnn import GnnModel, grad_logit_wrt_adjacency, grad_wrt_adjacency, graph_uncertainty, predict_hard
from .graph import Graph, PairRegistry, SubgraphSelection, induced_subgraph_bfs, make_graph, pagerank
from .stats import degree_distribution_distance
from .uncertainty import MARGIN, canonical_metric

MSA_REAL = "msa-real"
MSA_AU = "msa-au"
MSA_AD = "msa-ad"
MSA_AUD = "msa-aud"
JBDA = "jbda"
T_RND = "t-rnd"
RANDOM = "random"
STRATEGIES = (MSA_REAL, MSA_AU, MSA_AD, MSA_AUD, JBDA, T_RND, RANDOM)

_STRATEGY_ALIASES = {s: s for s in STRATEGIES}
_STRATEGY_ALIASES.update({"real": MSA_REAL, "au": MSA_AU, "ad": MSA_AD, "aud": MSA_AUD,
                          "trnd": T_RND, "t_rnd": T_RND, "msa_real": MSA_REAL, "msa_au": MSA_AU,
                          "msa_ad": MSA_AD, "msa_aud": MSA_AUD})

RECENTER_TRIES = 10
_RANK_DECIMALS = 12


def canonical_strategy(name: str) -> str:
    try:
        return _STRATEGY_ALIASES[name.strip().lower()]
    except KeyError:
        raise ValueError(f"unknown strategy {name!r}; expected one of {STRATEGIES}") from None


def _ceil(x: float) -> int:
    # guards against 0.1 * 30 == 3.0000000000000004
    return int(math.ceil(round(x, 9)))


@dataclass(frozen=True)
class AttackConfig:
    alpha: float = 0.05
    gamma: float = 0.1
    metric: str = MARGIN
    uncertainty_cap: Optional[float] = field(default=None)
    stat_cap: Optional[float] = 0.05
    literal_grad_mask: bool = False
    stat_breach: str = "skip"
    baseline_lambda: float = 0.6
    trnd_steps: int = 3

    def __post_init__(self):
        object.__setattr__(self, "metric", canonical_metric(self.metric))
        if self.uncertainty_cap is None and self.metric != MARGIN:
            object.__setattr__(self, "uncertainty_cap", 0.1)
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError(f"gamma must lie in (0, 1], got {self.gamma}")
        for name in ("uncertainty_cap", "stat_cap"):
            v = getattr(self, name)
            if v is not None and v <= 0:
                raise ValueError(f"{name} must be positive when enabled")
        if self.baseline_lambda < 0:
            raise ValueError("baseline_lambda must be non-negative")
        if self.stat_breach not in ("stop", "skip"):
            raise ValueError("stat_breach must be 'stop' or 'skip'")
        if self.trnd_steps < 1:
            raise ValueError("trnd_steps must be at least 1")

    def to_dict(self) -> dict:
        return asdict(self)


# --------------------------------------------------------------------------- uncertainty flips

def potential_scores(g: Graph, grad: np.ndarray, literal: bool = False) -> np.ndarray:
    """Upper-triangle flip potential: |grad| where flipping moves the score up, else 0.

    ``literal`` swaps the sign test (A=0 needs grad<0, A=1 needs grad>0).
    """
    a = g.adj
    up, down = (grad < 0, grad > 0) if literal else (grad > 0, grad < 0)
    legal = ((a == 0) & up) | ((a == 1) & down)
    score = np.where(legal, np.abs(grad), 0.0)
    return np.triu(score, k=1)


@dataclass
class FlipTrace:
    flips: list = field(default_factory=list)
    scores: list = field(default_factory=list)
    budget: int = 0
    rejected: int = 0
    stop_reason: str = "budget"


def au_flips(g: Graph, clone: GnnModel, cfg: AttackConfig) -> tuple[Graph, FlipTrace]:
    """Greedy gradient-ranked edge flips with the early-stop checks; returns the graph and a trace."""
    grad = grad_wrt_adjacency(clone, g, cfg.metric)
    score = potential_scores(g, grad, cfg.literal_grad_mask)
    iu, ju = np.nonzero(score > 0)
    trace = FlipTrace()
    trace.budget = _ceil(cfg.alpha * len(iu))
    if trace.budget == 0:
        trace.stop_reason = "no-budget" if len(iu) else "no-legal-position"
        return g, trace
    vals = score[iu, ju]
    # descending score, ties by position
    order = np.lexsort((ju, iu, -vals))
    if cfg.stat_breach == "stop":
        order = order[:trace.budget]
    adj = g.adj.copy()
    current = g
    for k in order:
        i, j = int(iu[k]), int(ju[k])
        adj[i, j] = adj[j, i] = 1 - adj[i, j]
        candidate = g.with_adj(adj)
        if cfg.stat_cap is not None and degree_distribution_distance(g, candidate) > cfg.stat_cap:
            adj[i, j] = adj[j, i] = 1 - adj[i, j]
            trace.rejected += 1
            if cfg.stat_breach == "skip":
                continue
            trace.stop_reason = "stat-cap"
            break
        current = candidate
        trace.flips.append((i, j))
        trace.scores.append(float(score[i, j]))
        if cfg.uncertainty_cap is not None and graph_uncertainty(clone, current, cfg.metric) > cfg.uncertainty_cap:
            trace.stop_reason = "uncertainty-cap"
            break
        if len(trace.flips) == trace.budget:
            break
    return current, trace


def au_gen(g: Graph, clone: GnnModel, cfg: AttackConfig) -> Graph:
    return au_flips(g, clone, cfg)[0].with_label(None)


# --------------------------------------------------------------------------- mixup

def rank_nodes(nodes: Sequence[int], scores: np.ndarray) -> list[int]:
    """Nodes ordered by descending importance; near-equal scores fall back to node index."""
    return sorted(nodes, key=lambda v: (-round(float(scores[v]), _RANK_DECIMALS), v))


def mix_subgraphs(g1: Graph, g2: Graph, sel1: Sequence[int], sel2: Sequence[int],
                  pr1: np.ndarray, pr2: np.ndarray) -> Graph:
    """Replace ``g1``'s induced subgraph on ``sel1`` with ``g2``'s on ``sel2``.

    Nodes are paired rank-to-rank by importance. Edges leaving the selection
    are kept; internal edges and feature rows come from the partner.
    """
    if len(sel1) != len(sel2):
        raise ValueError("selections must have equal size")
    r1 = rank_nodes(sel1, pr1)
    r2 = rank_nodes(sel2, pr2)
    adj = g1.adj.copy()
    feats = g1.feats.copy()
    src = np.array(r2, dtype=np.int64)
    dst = np.array(r1, dtype=np.int64)
    adj[np.ix_(dst, dst)] = g2.adj[np.ix_(src, src)]
    feats[dst] = g2.feats[src]
    return make_graph(adj, feats, None)


def _grow(g: Graph, size: int, rng: np.random.Generator) -> SubgraphSelection:
    best = None
    for _ in range(RECENTER_TRIES):
        sel = induced_subgraph_bfs(g, int(rng.integers(g.n)), size, rng)
        if best is None or len(sel.nodes) > len(best.nodes):
            best = sel
        if len(best.nodes) >= size:
            break
    return best


def _find(g: Graph, pool: Sequence[Graph]) -> int:
    for k, h in enumerate(pool):
        if h is g:
            return k
    for k, h in enumerate(pool):
        if h.n == g.n and np.array_equal(h.adj, g.adj) and np.array_equal(h.feats, g.feats):
            return k
    raise ValueError("g1 is not a member of the seed pool")


def pick_partner(i: int, count: int, registry: PairRegistry, rng: np.random.Generator) -> int:
    free = [j for j in range(count) if j != i and (i, j) not in registry]
    if not free:
        registry.reset()
        free = [j for j in range(count) if j != i]
    j = int(free[int(rng.integers(len(free)))])
    registry.add(i, j)
    return j


def ad_gen(g1: Graph, seed_pool: Sequence[Graph], registry: PairRegistry, cfg: AttackConfig,
           rng: np.random.Generator, scores: Optional[dict] = None, index: Optional[int] = None) -> Graph:
    """Mixup of ``g1`` with a fresh partner drawn from ``seed_pool``.

    ``scores`` caches host-graph PageRank vectors by pool index.
    """
    if len(seed_pool) < 2:
        raise ValueError("seed pool needs at least two graphs")
    i = _find(g1, seed_pool) if index is None else int(index)
    j = pick_partner(i, len(seed_pool), registry, rng)
    g2 = seed_pool[j]
    scores = {} if scores is None else scores
    for k in (i, j):
        if k not in scores:
            scores[k] = pagerank(seed_pool[k])
    size = max(1, _ceil(cfg.gamma * min(g1.n, g2.n)))
    sel1 = _grow(g1, size, rng).nodes
    sel2 = _grow(g2, size, rng).nodes
    s = min(len(sel1), len(sel2))
    return mix_subgraphs(g1, g2, sel1[:s], sel2[:s], scores[i], scores[j])


def aud_gen(g: Graph, clone: GnnModel, seed_pool: Sequence[Graph], registry: PairRegistry,
            cfg: AttackConfig, rng: np.random.Generator, scores: Optional[dict] = None,
            index: Optional[int] = None) -> Graph:
    mixed = ad_gen(g, seed_pool, registry, cfg, rng, scores, index)
    return au_gen(mixed, clone, cfg)


# --------------------------------------------------------------------------- baselines

def _discretize(relaxed: np.ndarray) -> np.ndarray:
    out = (relaxed >= 0.5).astype(np.uint8)
    out = np.maximum(np.triu(out, 1), np.triu(out, 1).T)
    return out


def jbda_gen(g: Graph, clone: GnnModel, cfg: AttackConfig) -> Graph:
    """One relaxed sign step along the uncertainty gradient, then rounding."""
    grad = grad_wrt_adjacency(clone, g, cfg.metric)
    relaxed = np.clip(g.adj + cfg.baseline_lambda * np.sign(grad), 0.0, 1.0)
    np.fill_diagonal(relaxed, 0.0)
    return make_graph(_discretize(relaxed), g.feats, None)


def trnd_gen(g: Graph, clone: GnnModel, cfg: AttackConfig, rng: np.random.Generator) -> Graph:
    """Multi-step relaxed push toward a random class other than the clone's prediction."""
    c_count = clone.config.num_classes
    if c_count < 2:
        raise ValueError("targeted perturbation needs at least two classes")
    pred = predict_hard(clone, g)
    others = [c for c in range(c_count) if c != pred]
    target = others[int(rng.integers(len(others)))]
    step = cfg.baseline_lambda / cfg.trnd_steps
    relaxed = g.adj.astype(np.float64)
    for _ in range(cfg.trnd_steps):
        grad = grad_logit_wrt_adjacency(clone, g, target, relaxed_adj=relaxed)
        relaxed = np.clip(relaxed + step * np.sign(grad), 0.0, 1.0)
        np.fill_diagonal(relaxed, 0.0)
    return make_graph(_discretize(relaxed), g.feats, None)


random_gen = generate_er_matching
