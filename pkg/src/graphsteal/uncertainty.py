"""Uncertainty scores over confidence vectors and their gradients.

Larger is more uncertain for all three scores. Ties between classes resolve
toward the lower class index.
"""

from __future__ import annotations

import numpy as np

MARGIN = "margin"
MAX = "max"
ENTROPY = "entropy"
METRICS = (MARGIN, MAX, ENTROPY)

_ALIASES = {"margin": MARGIN, "max": MAX, "maxconf": MAX, "max_conf": MAX, "entropy": ENTROPY}


def canonical_metric(name: str) -> str:
    try:
        return _ALIASES[name.strip().lower()]
    except KeyError:
        raise ValueError(f"unknown uncertainty metric {name!r}; expected one of {METRICS}") from None


def _top2(p: np.ndarray) -> tuple[int, int]:
    first = int(np.argmax(p))
    rest = p.copy()
    rest[first] = -np.inf
    return first, int(np.argmax(rest))


def margin(p) -> float:
    p = np.asarray(p, dtype=np.float64)
    if p.size < 2:
        raise ValueError("margin needs at least two classes")
    y1, y2 = _top2(p)
    return float(p[y2] - p[y1])


def max_conf(p) -> float:
    return float(-np.max(np.asarray(p, dtype=np.float64)))


def entropy(p) -> float:
    p = np.asarray(p, dtype=np.float64)
    nz = p[p > 0]
    return float(-(nz * np.log(nz)).sum())


def uncertainty(p, metric: str) -> float:
    metric = canonical_metric(metric)
    if metric == MARGIN:
        return margin(p)
    if metric == MAX:
        return max_conf(p)
    return entropy(p)


def uncertainty_grad(p, metric: str) -> np.ndarray:
    """Gradient of the score with respect to the probability vector ``p``."""
    metric = canonical_metric(metric)
    p = np.asarray(p, dtype=np.float64)
    g = np.zeros_like(p)
    if metric == MARGIN:
        y1, y2 = _top2(p)
        g[y2] += 1.0
        g[y1] -= 1.0
    elif metric == MAX:
        g[int(np.argmax(p))] = -1.0
    else:
        safe = np.maximum(p, np.finfo(np.float64).tiny)
        g = -(np.log(safe) + 1.0)
    return g
