"""Defender-side tools: hard-label response noise and generated-graph detection."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .graph import Graph
from .stats import StatVector, stat_vector

DETECTOR_FEATURES = ("nodes", "edges", "density", "mean_degree", "degree_std", "max_degree",
                     "triangles", "clustering", "transitivity", "cliques", "connectivity")


@dataclass(frozen=True)
class NoisyOracleConfig:
    noise_rate: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.noise_rate <= 1.0:
            raise ValueError(f"noise rate must lie in [0, 1], got {self.noise_rate}")


def noisy_label(true_label: int, num_classes: int, p: float, rng: np.random.Generator) -> int:
    """With probability ``p`` swap the label for a uniformly drawn different class."""
    if num_classes < 2:
        raise ValueError("label noise needs at least two classes")
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"noise rate must lie in [0, 1], got {p}")
    if rng.random() >= p:
        return int(true_label)
    other = int(rng.integers(num_classes - 1))
    return other + 1 if other >= true_label else other


# --------------------------------------------------------------------------- detection

def stat_features(sv: StatVector, n: int) -> np.ndarray:
    hist = sv.degree_hist
    degs = np.arange(len(hist))
    mean = float(hist @ degs)
    std = float(np.sqrt(max(hist @ (degs - mean) ** 2, 0.0)))
    edges = mean * n / 2
    density = edges / (n * (n - 1) / 2) if n > 1 else 0.0
    max_deg = float(np.flatnonzero(hist).max()) if hist.any() else 0.0
    return np.array([n, edges, density, mean, std, max_deg, sv.triangles, sv.clustering,
                     sv.transitivity, sv.cliques, sv.connectivity], dtype=np.float64)


def graph_features(graphs: Sequence[Graph], with_connectivity: bool = True) -> np.ndarray:
    return np.array([stat_features(stat_vector(g, with_connectivity), g.n) for g in graphs])


class Detector:
    """Scores graphs in [0, 1]; at or above ``threshold`` a graph is flagged as generated."""

    threshold: float = 0.5

    def score(self, graphs: Sequence[Graph]) -> np.ndarray:
        raise NotImplementedError

    def flag(self, graphs: Sequence[Graph]) -> np.ndarray:
        return self.score(graphs) >= self.threshold


class FunctionDetector(Detector):
    def __init__(self, fn: Callable[[Graph], float], threshold: float = 0.5):
        self.fn = fn
        self.threshold = float(threshold)

    def score(self, graphs):
        return np.array([float(self.fn(g)) for g in graphs])


def _sigmoid(z: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * z))


class LinearStatDetector(Detector):
    def __init__(self, weights, bias: float, mean, scale, threshold: float = 0.5,
                 with_connectivity: bool = True):
        self.weights = np.asarray(weights, dtype=np.float64)
        self.bias = float(bias)
        self.mean = np.asarray(mean, dtype=np.float64)
        self.scale = np.asarray(scale, dtype=np.float64)
        self.threshold = float(threshold)
        self.with_connectivity = with_connectivity

    def score_features(self, feats: np.ndarray) -> np.ndarray:
        return _sigmoid(((feats - self.mean) / self.scale) @ self.weights + self.bias)

    def score(self, graphs):
        return self.score_features(graph_features(graphs, self.with_connectivity))

    def to_dict(self) -> dict:
        return {"features": list(DETECTOR_FEATURES), "weights": self.weights.tolist(),
                "bias": self.bias, "mean": self.mean.tolist(), "scale": self.scale.tolist(),
                "threshold": self.threshold, "with_connectivity": self.with_connectivity}

    @classmethod
    def from_dict(cls, d: dict) -> "LinearStatDetector":
        return cls(d["weights"], d["bias"], d["mean"], d["scale"], d["threshold"],
                   d.get("with_connectivity", True))

    def save(self, path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.to_dict(), indent=2))
        return path

    @classmethod
    def load(cls, path) -> "LinearStatDetector":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _balanced_accuracy(scores: np.ndarray, y: np.ndarray, threshold: float) -> float:
    flagged = scores >= threshold
    tpr = flagged[y == 1].mean()
    tnr = (~flagged[y == 0]).mean()
    return float(0.5 * (tpr + tnr))


def best_threshold(scores: np.ndarray, y: np.ndarray) -> float:
    """Threshold maximising balanced accuracy.

    The lowest maximising score wins ties and the cut is then moved halfway
    down to the next lower score, which leaves the accuracy on ``scores`` unchanged.
    """
    candidates = np.unique(np.concatenate([scores, [1.0]]))
    accs = [_balanced_accuracy(scores, y, t) for t in candidates]
    k = int(np.argmax(accs))
    if k == 0:
        return float(candidates[0])
    return float(0.5 * (candidates[k - 1] + candidates[k]))


def fit_logistic(x: np.ndarray, y: np.ndarray, l2: float = 1e-3, lr: float = 0.5,
                 max_iter: int = 20000, tol: float = 1e-7) -> tuple[np.ndarray, float]:
    """Full-batch gradient descent on the L2-regularised logistic loss."""
    w = np.zeros(x.shape[1])
    b = 0.0
    for _ in range(max_iter):
        r = _sigmoid(x @ w + b) - y
        gw = x.T @ r / len(y) + l2 * w
        gb = float(r.mean())
        w -= lr * gw
        b -= lr * gb
        if max(np.abs(gw).max(initial=0.0), abs(gb)) < tol:
            break
    return w, b


def baseline_detector_fit(real: Sequence[Graph], generated: Sequence[Graph],
                          rng: Optional[np.random.Generator] = None, holdout: float = 0.2,
                          with_connectivity: bool = True) -> LinearStatDetector:
    """Logistic scorer on structural statistics, threshold tuned on a held-out share."""
    if not real or not generated:
        raise ValueError("detector fitting needs both real and generated graphs")
    rng = rng if rng is not None else np.random.default_rng(0)
    feats = graph_features(list(real) + list(generated), with_connectivity)
    y = np.concatenate([np.zeros(len(real)), np.ones(len(generated))])
    train, held = [], []
    for cls in (0, 1):
        idx = rng.permutation(np.flatnonzero(y == cls))
        k = int(round(holdout * len(idx)))
        if len(idx) > 1:
            k = min(max(k, 1), len(idx) - 1)
        else:
            k = 0
        held.extend(idx[:k])
        train.extend(idx[k:])
    train, held = np.array(train), np.array(held)
    if len(held) == 0 or len(np.unique(y[held])) < 2:
        held = train
    mean = feats[train].mean(axis=0)
    scale = feats[train].std(axis=0)
    scale[scale == 0] = 1.0
    w, b = fit_logistic((feats[train] - mean) / scale, y[train])
    det = LinearStatDetector(w, b, mean, scale, 0.5, with_connectivity)
    det.threshold = best_threshold(det.score_features(feats[held]), y[held])
    return det


def detection_accuracy(detector: Detector, real: Sequence[Graph], generated: Sequence[Graph]) -> float:
    """Balanced accuracy of the detector's flags at its calibrated threshold."""
    if not real or not generated:
        raise ValueError("need non-empty real and generated sets")
    scores = detector.score(list(real) + list(generated))
    y = np.concatenate([np.zeros(len(real)), np.ones(len(generated))])
    return _balanced_accuracy(scores, y, detector.threshold)
