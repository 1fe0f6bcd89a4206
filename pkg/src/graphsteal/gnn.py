"""Dense numpy graph neural networks for graph classification.

Three layer kinds share one batched code path. Graphs in a batch are padded
to a common node count; a 0/1 node mask keeps padding out of pooling, and
padded rows of the adjacency are empty so padding never reaches real nodes.

The backward pass is written out by hand. It returns gradients for every
parameter and, on request, for the (relaxed) adjacency itself, including the
GCN degree normalisation and the SAGE degree division.

Layer rules (``H`` is the node-embedding matrix of the previous layer)::

    GCN   H' = relu(D^-1/2 (A + I) D^-1/2 H W + b),   D = rowsum(A + I)
    SAGE  H' = relu(H W1 + (A H / max(deg, eps)) W2 + b)
    GIN   H' = relu(relu((H + A H) Wa + ba) Wb + bb)

The classifier head is linear over the concatenation of the pooled
embeddings of every layer, the raw features included.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .graph import Graph
from .uncertainty import canonical_metric, uncertainty, uncertainty_grad

GCN, SAGE, GIN = "gcn", "sage", "gin"
LAYER_KINDS = (GCN, SAGE, GIN)
AVERAGE, SUM, MAXIMUM = "average", "sum", "maximum"
POOLINGS = (AVERAGE, SUM, MAXIMUM)
SAGE_EPS = 1e-8
CHECKPOINT_VERSION = 1

_POOL_ALIASES = {"average": AVERAGE, "mean": AVERAGE, "avg": AVERAGE,
                 "sum": SUM, "add": SUM, "max": MAXIMUM, "maximum": MAXIMUM}


class TrainingError(RuntimeError):
    def __init__(self, epoch: int, loss: float):
        super().__init__(f"non-finite training loss {loss} at epoch {epoch}")
        self.epoch = epoch
        self.loss = loss


@dataclass(frozen=True)
class ModelConfig:
    layer_kind: str = GCN
    num_layers: int = 3
    hidden_width: int = 32
    pooling: str = AVERAGE
    num_classes: int = 2
    feat_dim: int = 1

    def __post_init__(self):
        kind = self.layer_kind.lower()
        if kind == "graphsage":
            kind = SAGE
        if kind not in LAYER_KINDS:
            raise ValueError(f"unknown layer kind {self.layer_kind!r}")
        pool = _POOL_ALIASES.get(self.pooling.lower())
        if pool is None:
            raise ValueError(f"unknown pooling {self.pooling!r}")
        object.__setattr__(self, "layer_kind", kind)
        object.__setattr__(self, "pooling", pool)
        if self.num_layers < 1 or self.hidden_width < 1 or self.feat_dim < 1 or self.num_classes < 2:
            raise ValueError("layers, widths and feature dim must be positive and num_classes >= 2")

    @property
    def head_width(self) -> int:
        return self.feat_dim + self.num_layers * self.hidden_width

    def to_dict(self) -> dict:
        return {"layer_kind": self.layer_kind, "num_layers": self.num_layers,
                "hidden_width": self.hidden_width, "pooling": self.pooling,
                "num_classes": self.num_classes, "feat_dim": self.feat_dim}

    @classmethod
    def wide_preset(cls, **kw) -> "ModelConfig":
        kw.setdefault("hidden_width", 128)
        return cls(**kw)


def param_shapes(cfg: ModelConfig) -> list[tuple[str, tuple[int, ...]]]:
    """Ordered parameter names and shapes; this order defines the flat layout."""
    shapes = []
    d_in = cfg.feat_dim
    h = cfg.hidden_width
    for l in range(1, cfg.num_layers + 1):
        if cfg.layer_kind == GCN:
            shapes += [(f"W{l}", (d_in, h)), (f"b{l}", (h,))]
        elif cfg.layer_kind == SAGE:
            shapes += [(f"W{l}_self", (d_in, h)), (f"W{l}_nbr", (d_in, h)), (f"b{l}", (h,))]
        else:
            shapes += [(f"W{l}_a", (d_in, h)), (f"b{l}_a", (h,)), (f"W{l}_b", (h, h)), (f"b{l}_b", (h,))]
        d_in = h
    shapes += [("W_out", (cfg.head_width, cfg.num_classes)), ("b_out", (cfg.num_classes,))]
    return shapes


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0


@dataclass
class GnnModel:
    config: ModelConfig
    params: dict[str, np.ndarray]
    adam: AdamState = field(default_factory=AdamState)

    def copy(self) -> "GnnModel":
        return GnnModel(self.config, {k: v.copy() for k, v in self.params.items()},
                        AdamState({k: v.copy() for k, v in self.adam.m.items()},
                                  {k: v.copy() for k, v in self.adam.v.items()}, self.adam.step))

    def flat_params(self) -> np.ndarray:
        return np.concatenate([self.params[k].ravel() for k, _ in param_shapes(self.config)])

    def set_flat_params(self, flat: np.ndarray) -> None:
        pos = 0
        for name, shape in param_shapes(self.config):
            size = int(np.prod(shape))
            self.params[name] = np.array(flat[pos:pos + size], dtype=np.float64).reshape(shape)
            pos += size
        if pos != flat.size:
            raise ValueError(f"flat vector has {flat.size} entries, expected {pos}")

    def zero_params(self) -> None:
        for k in self.params:
            self.params[k] = np.zeros_like(self.params[k])


def init_model(config: ModelConfig, rng: np.random.Generator) -> GnnModel:
    """Glorot-uniform weights, zero biases."""
    params = {}
    for name, shape in param_shapes(config):
        if len(shape) == 2:
            bound = math.sqrt(6.0 / (shape[0] + shape[1]))
            params[name] = rng.uniform(-bound, bound, size=shape)
        else:
            params[name] = np.zeros(shape)
    return GnnModel(config, params)


# --------------------------------------------------------------------------- batching

@dataclass
class Batch:
    adj: np.ndarray    # (B, n, n) float64
    feats: np.ndarray  # (B, n, d)
    mask: np.ndarray   # (B, n) 0/1
    counts: np.ndarray  # (B,)
    prop: Optional[dict] = None  # cached propagation operator, see _propagation


def pack(graphs: Sequence[Graph], adjs: Optional[Sequence[np.ndarray]] = None) -> Batch:
    size = max(g.n for g in graphs)
    b = len(graphs)
    d = graphs[0].feats.shape[1]
    adj = np.zeros((b, size, size))
    feats = np.zeros((b, size, d))
    mask = np.zeros((b, size))
    for k, g in enumerate(graphs):
        n = g.n
        adj[k, :n, :n] = g.adj if adjs is None else adjs[k]
        feats[k, :n] = g.feats
        mask[k, :n] = 1.0
    return Batch(adj, feats, mask, mask.sum(axis=1))


def _take(batch: Batch, idx: np.ndarray) -> Batch:
    counts = batch.counts[idx]
    size = int(counts.max())
    prop = None
    if batch.prop is not None:
        prop = {"op": batch.prop["op"][idx, :size, :size]}
    return Batch(batch.adj[idx, :size, :size], batch.feats[idx, :size], batch.mask[idx, :size], counts, prop)


def _propagation(kind: str, a: np.ndarray) -> dict:
    """Neighbourhood operator ``op`` with ``op @ H`` the aggregated messages.

    GCN: symmetric-normalised ``A + I``; SAGE: row-normalised ``A`` (mean of
    neighbours); GIN: ``A + I``. The intermediates are kept for the
    adjacency backward pass.
    """
    eye = np.eye(a.shape[1])[None]
    if kind == GCN:
        at = a + eye
        deg = at.sum(axis=2)
        s = deg ** -0.5
        return {"op": s[:, :, None] * at * s[:, None, :], "at": at, "deg": deg, "s": s}
    if kind == SAGE:
        deg = a.sum(axis=2)
        dm = np.maximum(deg, SAGE_EPS)
        return {"op": a / dm[:, :, None], "deg": deg, "dm": dm}
    return {"op": a + eye}


def _propagation_backward(kind: str, a: np.ndarray, prop: dict, dop: np.ndarray) -> np.ndarray:
    if kind == GCN:
        s, at = prop["s"], prop["at"]
        ds = (dop * at * s[:, None, :]).sum(axis=2) + (dop * at * s[:, :, None]).sum(axis=1)
        ddeg = ds * (-0.5) * prop["deg"] ** -1.5
        return dop * s[:, :, None] * s[:, None, :] + ddeg[:, :, None]
    if kind == SAGE:
        dm = prop["dm"]
        ddm = -(dop * a).sum(axis=2) / dm ** 2
        ddeg = np.where(prop["deg"] > SAGE_EPS, ddm, 0.0)
        return dop / dm[:, :, None] + ddeg[:, :, None]
    return dop


# --------------------------------------------------------------------------- forward

@dataclass
class ForwardTrace:
    embeddings: list  # h^0 .. h^k, each (n, width)
    pooled: list      # per-layer pooled vectors
    logits: np.ndarray
    probs: np.ndarray
    adj: np.ndarray


def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _pool(h: np.ndarray, batch: Batch, pooling: str):
    if pooling == MAXIMUM:
        masked = np.where(batch.mask[:, :, None] > 0, h, -np.inf)
        idx = np.argmax(masked, axis=1)
        return np.take_along_axis(h, idx[:, None, :], axis=1)[:, 0, :], idx
    s = (batch.mask[:, None, :] @ h)[:, 0, :]
    if pooling == AVERAGE:
        s = s / batch.counts[:, None]
    return s, None


def _pool_backward(dp: np.ndarray, h: np.ndarray, batch: Batch, pooling: str, idx) -> np.ndarray:
    if pooling == MAXIMUM:
        dh = np.zeros_like(h)
        np.put_along_axis(dh, idx[:, None, :], dp[:, None, :], axis=1)
        return dh
    scale = batch.mask if pooling == SUM else batch.mask / batch.counts[:, None]
    return scale[:, :, None] * dp[:, None, :]


def _forward(model: GnnModel, batch: Batch) -> dict:
    cfg = model.config
    p = model.params
    prop = batch.prop if batch.prop is not None else _propagation(cfg.layer_kind, batch.adj)
    op = prop["op"]
    h = batch.feats
    hs = [h]
    caches = []
    for l in range(1, cfg.num_layers + 1):
        if cfg.layer_kind == GCN:
            m = h @ p[f"W{l}"]
            z = op @ m + p[f"b{l}"]
            caches.append({"m": m, "z": z})
        elif cfg.layer_kind == SAGE:
            nb = op @ h
            z = h @ p[f"W{l}_self"] + nb @ p[f"W{l}_nbr"] + p[f"b{l}"]
            caches.append({"nb": nb, "z": z})
        else:
            sm = op @ h
            u = sm @ p[f"W{l}_a"] + p[f"b{l}_a"]
            r = np.maximum(u, 0.0)
            z = r @ p[f"W{l}_b"] + p[f"b{l}_b"]
            caches.append({"sm": sm, "u": u, "r": r, "z": z})
        h = np.maximum(z, 0.0)
        hs.append(h)
    pooled, pidx = [], []
    for hl in hs:
        v, idx = _pool(hl, batch, cfg.pooling)
        pooled.append(v)
        pidx.append(idx)
    cat = np.concatenate(pooled, axis=1)
    logits = cat @ p["W_out"] + p["b_out"]
    return {"prop": prop, "hs": hs, "caches": caches, "pooled": pooled, "pidx": pidx, "cat": cat,
            "logits": logits, "probs": _softmax(logits)}


def _outer_sum(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """sum over batch and nodes of x_bn^T y_bn"""
    return x.reshape(-1, x.shape[-1]).T @ y.reshape(-1, y.shape[-1])


def _backward(model: GnnModel, batch: Batch, fw: dict, dlogits: np.ndarray,
              want_params: bool = True, want_adj: bool = False):
    cfg = model.config
    p = model.params
    op_t = np.swapaxes(fw["prop"]["op"], 1, 2)
    hs = fw["hs"]
    grads = {}
    if want_params:
        grads["W_out"] = fw["cat"].T @ dlogits
        grads["b_out"] = dlogits.sum(axis=0)
    dcat = dlogits @ p["W_out"].T
    widths = [h.shape[2] for h in hs]
    offsets = np.cumsum([0] + widths)
    dps = [dcat[:, offsets[l]:offsets[l + 1]] for l in range(len(hs))]
    dop = np.zeros_like(op_t) if want_adj else None
    dh = _pool_backward(dps[-1], hs[-1], batch, cfg.pooling, fw["pidx"][-1])
    for l in range(cfg.num_layers, 0, -1):
        c = fw["caches"][l - 1]
        hin = hs[l - 1]
        dz = dh * (c["z"] > 0)
        if cfg.layer_kind == GCN:
            dm = op_t @ dz
            if want_params:
                grads[f"W{l}"] = _outer_sum(hin, dm)
                grads[f"b{l}"] = dz.sum(axis=(0, 1))
            dhin = dm @ p[f"W{l}"].T
            if want_adj:
                dop += dz @ np.swapaxes(c["m"], 1, 2)
        elif cfg.layer_kind == SAGE:
            if want_params:
                grads[f"W{l}_self"] = _outer_sum(hin, dz)
                grads[f"W{l}_nbr"] = _outer_sum(c["nb"], dz)
                grads[f"b{l}"] = dz.sum(axis=(0, 1))
            dnb = dz @ p[f"W{l}_nbr"].T
            dhin = dz @ p[f"W{l}_self"].T + op_t @ dnb
            if want_adj:
                dop += dnb @ np.swapaxes(hin, 1, 2)
        else:
            if want_params:
                grads[f"W{l}_b"] = _outer_sum(c["r"], dz)
                grads[f"b{l}_b"] = dz.sum(axis=(0, 1))
            du = (dz @ p[f"W{l}_b"].T) * (c["u"] > 0)
            if want_params:
                grads[f"W{l}_a"] = _outer_sum(c["sm"], du)
                grads[f"b{l}_a"] = du.sum(axis=(0, 1))
            dsm = du @ p[f"W{l}_a"].T
            dhin = op_t @ dsm
            if want_adj:
                dop += dsm @ np.swapaxes(hin, 1, 2)
        dh = dhin + _pool_backward(dps[l - 1], hin, batch, cfg.pooling, fw["pidx"][l - 1])
    da = _propagation_backward(cfg.layer_kind, batch.adj, fw["prop"], dop) if want_adj else None
    return grads, da


def _check_feats(model: GnnModel, g: Graph) -> None:
    if g.feats.shape[1] != model.config.feat_dim:
        raise ValueError(f"graph has feature width {g.feats.shape[1]}, model expects {model.config.feat_dim}")


def _single(g: Graph, relaxed_adj) -> Batch:
    adj = np.asarray(g.adj, dtype=np.float64) if relaxed_adj is None else np.asarray(relaxed_adj, dtype=np.float64)
    if adj.shape != (g.n, g.n):
        raise ValueError("relaxed adjacency shape mismatch")
    ones = np.ones((1, g.n))
    return Batch(adj[None], np.asarray(g.feats, dtype=np.float64)[None], ones, np.array([float(g.n)]))


def forward(model: GnnModel, g: Graph, relaxed_adj: Optional[np.ndarray] = None) -> ForwardTrace:
    _check_feats(model, g)
    batch = _single(g, relaxed_adj)
    fw = _forward(model, batch)
    return ForwardTrace([h[0] for h in fw["hs"]], [v[0] for v in fw["pooled"]],
                        fw["logits"][0], fw["probs"][0], batch.adj[0])


def predict_proba(model: GnnModel, graphs: Sequence[Graph], batch_size: int = 256) -> np.ndarray:
    out = []
    for start in range(0, len(graphs), batch_size):
        chunk = graphs[start:start + batch_size]
        for g in chunk:
            _check_feats(model, g)
        out.append(_forward(model, pack(chunk))["probs"])
    return np.concatenate(out, axis=0) if out else np.zeros((0, model.config.num_classes))


def predict_logits(model: GnnModel, graphs: Sequence[Graph], batch_size: int = 256) -> np.ndarray:
    out = [_forward(model, pack(graphs[s:s + batch_size]))["logits"] for s in range(0, len(graphs), batch_size)]
    return np.concatenate(out, axis=0) if out else np.zeros((0, model.config.num_classes))


def predict_hard(model: GnnModel, g: Graph) -> int:
    return int(np.argmax(forward(model, g).probs))


def predict_hard_batch(model: GnnModel, graphs: Sequence[Graph]) -> np.ndarray:
    return np.argmax(predict_proba(model, graphs), axis=1)


# --------------------------------------------------------------------------- gradients

def _symmetrize(grad: np.ndarray) -> np.ndarray:
    sym = 0.5 * (grad + grad.T)
    np.fill_diagonal(sym, 0.0)
    return sym


def adjacency_gradient(model: GnnModel, g: Graph, dlogits_fn, relaxed_adj=None) -> np.ndarray:
    """d(objective)/dA for an objective defined through ``dlogits_fn(logits, probs)``."""
    _check_feats(model, g)
    batch = _single(g, relaxed_adj)
    fw = _forward(model, batch)
    dlogits = dlogits_fn(fw["logits"][0], fw["probs"][0])[None]
    _, da = _backward(model, batch, fw, dlogits, want_params=False, want_adj=True)
    return _symmetrize(da[0])


def grad_wrt_adjacency(model: GnnModel, g: Graph, objective: str = "margin",
                       relaxed_adj: Optional[np.ndarray] = None) -> np.ndarray:
    """Gradient of an uncertainty score of the model's output w.r.t. the adjacency.

    The raw gradient ``G`` is returned as ``(G + G.T) / 2`` with a zero
    diagonal, i.e. half the directional derivative along a symmetric change
    of the pair ``(i, j), (j, i)``.
    """
    metric = canonical_metric(objective)

    def dlogits(_logits, probs):
        dp = uncertainty_grad(probs, metric)
        return probs * (dp - probs @ dp)

    return adjacency_gradient(model, g, dlogits, relaxed_adj)


def grad_logit_wrt_adjacency(model: GnnModel, g: Graph, cls: int,
                             relaxed_adj: Optional[np.ndarray] = None) -> np.ndarray:
    def dlogits(logits, _probs):
        e = np.zeros_like(logits)
        e[cls] = 1.0
        return e

    return adjacency_gradient(model, g, dlogits, relaxed_adj)


def graph_uncertainty(model: GnnModel, g: Graph, metric: str, relaxed_adj=None) -> float:
    return uncertainty(forward(model, g, relaxed_adj).probs, metric)


def loss_and_param_grads(model: GnnModel, graphs: Sequence[Graph], labels: Sequence[int]):
    """Mean cross-entropy over ``graphs`` and its parameter gradients."""
    batch = pack(graphs)
    return _loss_grads(model, batch, np.asarray(labels, dtype=np.int64))


def _loss_grads(model: GnnModel, batch: Batch, y: np.ndarray):
    fw = _forward(model, batch)
    logits = fw["logits"]
    shifted = logits - logits.max(axis=1, keepdims=True)
    logp = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    b = len(y)
    loss = float(-logp[np.arange(b), y].mean())
    dlogits = fw["probs"].copy()
    dlogits[np.arange(b), y] -= 1.0
    dlogits /= b
    grads, _ = _backward(model, batch, fw, dlogits, want_params=True)
    return loss, grads


# --------------------------------------------------------------------------- training

def adam_step(model: GnnModel, grads: dict, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> None:
    st = model.adam
    st.step += 1
    c1 = 1.0 - beta1 ** st.step
    c2 = 1.0 - beta2 ** st.step
    for name, g in grads.items():
        m = st.m.get(name)
        if m is None:
            m = st.m[name] = np.zeros_like(g)
            st.v[name] = np.zeros_like(g)
        v = st.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        model.params[name] -= lr * (m / c1) / (np.sqrt(v / c2) + eps)


def fit(model: GnnModel, pool: Sequence[tuple[Graph, int]], epochs: int, lr: float,
        rng: np.random.Generator, batch_size: int = 32) -> list[float]:
    """Minimise mean cross-entropy against hard labels with Adam.

    Graphs are reshuffled every epoch. Returns the mean training loss of each
    epoch (measured on the pre-update parameters of each minibatch).
    """
    if epochs <= 0:
        return []
    if not pool:
        raise ValueError("empty training pool")
    graphs = [g for g, _ in pool]
    y = np.array([int(lbl) for _, lbl in pool], dtype=np.int64)
    if y.min() < 0 or y.max() >= model.config.num_classes:
        raise ValueError("label out of range")
    for g in graphs:
        _check_feats(model, g)
    packed = pack(graphs)
    packed.prop = {"op": _propagation(model.config.layer_kind, packed.adj)["op"]}
    total = len(graphs)
    history = []
    for epoch in range(epochs):
        order = rng.permutation(total)
        running = 0.0
        for start in range(0, total, batch_size):
            idx = order[start:start + batch_size]
            loss, grads = _loss_grads(model, _take(packed, idx), y[idx])
            if not math.isfinite(loss):
                raise TrainingError(epoch, loss)
            running += loss * len(idx)
            adam_step(model, grads, lr)
        history.append(running / total)
    return history


# --------------------------------------------------------------------------- checkpoints

def save_checkpoint(model: GnnModel, path) -> Path:
    """Write ``config`` (JSON) and the flat float64 parameter vector to an ``.npz``.

    Adam moments and the step counter travel along so fine-tuning can resume.
    """
    path = Path(path)
    names = [k for k, _ in param_shapes(model.config)]
    st = model.adam
    has_adam = all(k in st.m for k in names)
    arrays = {
        "format_version": np.array(CHECKPOINT_VERSION),
        "config": np.array(json.dumps(model.config.to_dict(), sort_keys=True)),
        "params": model.flat_params(),
        "adam_step": np.array(st.step if has_adam else 0),
    }
    if has_adam:
        arrays["adam_m"] = np.concatenate([st.m[k].ravel() for k in names])
        arrays["adam_v"] = np.concatenate([st.v[k].ravel() for k in names])
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)
    return path


def load_checkpoint(path) -> GnnModel:
    with np.load(Path(path), allow_pickle=False) as data:
        version = int(data["format_version"])
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        cfg = ModelConfig(**json.loads(str(data["config"])))
        model = GnnModel(cfg, {})
        model.set_flat_params(data["params"])
        if "adam_m" in data:
            tmp = GnnModel(cfg, {})
            tmp.set_flat_params(data["adam_m"])
            model.adam.m = tmp.params
            tmp = GnnModel(cfg, {})
            tmp.set_flat_params(data["adam_v"])
            model.adam.v = tmp.params
            model.adam.step = int(data["adam_step"])
    return model
