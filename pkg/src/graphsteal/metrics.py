"""Clone-quality metrics and the consecutive-round diversity diagnostic."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .gnn import GnnModel, predict_hard_batch, predict_logits
from .graph import Graph
from .uncertainty import ENTROPY, MARGIN, MAX, METRICS, entropy, margin, max_conf, uncertainty  # noqa: F401


def fidelity(clone: GnnModel, target: GnnModel, eval_set: Sequence[Graph]) -> float:
    """Fraction of graphs on which clone and target predict the same class."""
    if len(eval_set) == 0:
        raise ValueError("empty evaluation set")
    return float(np.mean(predict_hard_batch(clone, eval_set) == predict_hard_batch(target, eval_set)))


def accuracy(model: GnnModel, eval_set: Sequence[Graph]) -> float:
    if len(eval_set) == 0:
        raise ValueError("empty evaluation set")
    labels = [g.label for g in eval_set]
    if any(lbl is None for lbl in labels):
        raise ValueError("accuracy needs labelled graphs")
    return float(np.mean(predict_hard_batch(model, eval_set) == np.asarray(labels)))


def diversity_stat(target: GnnModel, gen_t: Sequence[Graph], gen_t1: Sequence[Graph]) -> np.ndarray:
    """Squared distance between target logits on position-aligned generated graphs.

    Researcher-side diagnostic: it reads the target's raw outputs, which the
    attacker never sees.
    """
    if len(gen_t) != len(gen_t1):
        raise ValueError(f"length mismatch: {len(gen_t)} vs {len(gen_t1)}")
    if len(gen_t) == 0:
        return np.zeros(0)
    diff = predict_logits(target, list(gen_t)) - predict_logits(target, list(gen_t1))
    return (diff ** 2).sum(axis=1)
