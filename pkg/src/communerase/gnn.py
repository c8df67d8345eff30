"""Dense-math GNN backbones trained full-batch on the mapped graph.

All three backbones (spectral convolution, single-head attention, mean
aggregation) are implemented directly in numpy with hand-written gradients so
that training is bitwise deterministic for a fixed seed and the analytic
gradients can be checked against finite differences.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import serialize
from .errors import ParameterError
from .graph import UNLABELED, Graph, Split
from .mapping import MappedGraph, MappingTables

_LEAKY_SLOPE = 0.2


@dataclass(frozen=True)
class Hyper:
    hidden: int = 64
    learning_rate: float = 0.01
    weight_decay: float = 0.001
    epochs: int = 200


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0

    @classmethod
    def like(cls, params: list[np.ndarray]) -> "AdamState":
        return cls(m=[np.zeros_like(p) for p in params],
                   v=[np.zeros_like(p) for p in params])


@dataclass
class TrainedModel:
    backbone: str
    weights: list[np.ndarray]       # one W per layer
    attentions: list[np.ndarray]    # one a per layer (gat only)
    hyper: Hyper
    seed: int
    num_classes: int
    loss_trace: np.ndarray
    adam: AdamState | None = None

    @property
    def params(self) -> list[np.ndarray]:
        return self.weights + self.attentions


@dataclass(frozen=True)
class Prediction:
    probs: np.ndarray
    label: int


# -- propagation structures -----------------------------------------------------


@dataclass(frozen=True)
class Prop:
    """Prepared adjacency for one forward pass family."""

    n: int
    matrix: sp.csr_matrix | None = None       # gcn: sym-normalized, sage: row mean
    matrix_t: sp.csr_matrix | None = None     # transpose when not symmetric
    tgt: np.ndarray | None = None             # gat edge targets (sorted)
    src: np.ndarray | None = None             # gat edge sources
    indptr: np.ndarray | None = None          # gat segment starts per target


def build_prop(backbone: str, n: int, pairs: np.ndarray, weights: np.ndarray) -> Prop:
    """Adjacency preparation; only the spectral backbone consumes edge weights."""
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    if backbone == "gcn":
        rows = np.concatenate([pairs[:, 0], pairs[:, 1], np.arange(n)])
        cols = np.concatenate([pairs[:, 1], pairs[:, 0], np.arange(n)])
        vals = np.concatenate([weights, weights, np.ones(n)])
        a_hat = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
        deg = np.asarray(a_hat.sum(axis=1)).ravel()
        inv_sqrt = 1.0 / np.sqrt(deg)
        s = a_hat.multiply(inv_sqrt[:, None]).multiply(inv_sqrt[None, :]).tocsr()
        return Prop(n=n, matrix=s)
    if backbone == "sage":
        rows = np.concatenate([pairs[:, 0], pairs[:, 1], np.arange(n)])
        cols = np.concatenate([pairs[:, 1], pairs[:, 0], np.arange(n)])
        vals = np.ones(len(rows))
        a_self = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
        deg = np.asarray(a_self.sum(axis=1)).ravel()
        p = a_self.multiply(1.0 / deg[:, None]).tocsr()
        return Prop(n=n, matrix=p, matrix_t=p.T.tocsr())
    if backbone == "gat":
        tgt = np.concatenate([pairs[:, 0], pairs[:, 1], np.arange(n)])
        src = np.concatenate([pairs[:, 1], pairs[:, 0], np.arange(n)])
        order = np.lexsort((src, tgt))
        tgt, src = tgt[order], src[order]
        indptr = np.zeros(n + 1, dtype=np.int64)
        np.add.at(indptr, tgt + 1, 1)
        np.cumsum(indptr, out=indptr)
        return Prop(n=n, tgt=tgt, src=src, indptr=indptr)
    raise ParameterError(f"unknown backbone {backbone!r}")


def _relu(x):
    return np.maximum(x, 0.0)


def _segment_softmax(scores: np.ndarray, indptr: np.ndarray) -> np.ndarray:
    starts = indptr[:-1]
    seg_max = np.maximum.reduceat(scores, starts)
    seg_id = np.repeat(np.arange(len(starts)), np.diff(indptr))
    ex = np.exp(scores - seg_max[seg_id])
    seg_sum = np.add.reduceat(ex, starts)
    return ex / seg_sum[seg_id]


# -- forward/backward per backbone ------------------------------------------------


def _matrix_forward(prop: Prop, X: np.ndarray, weights: list[np.ndarray],
                    activate_output: bool, want_cache: bool):
    """Shared path for the spectral and mean-aggregation backbones."""
    h = X
    cache = {"inputs": [], "pre": []}
    last = len(weights) - 1
    for l, w in enumerate(weights):
        p = prop.matrix @ h
        z = p @ w
        if want_cache:
            cache["inputs"].append(p)
            cache["pre"].append(z)
        h = _relu(z) if (l < last or activate_output) else z
    return (h, cache) if want_cache else h


def _matrix_backward(prop: Prop, weights: list[np.ndarray], cache, dlogits: np.ndarray):
    grads = [None] * len(weights)
    dz = dlogits
    mat_t = prop.matrix_t if prop.matrix_t is not None else prop.matrix
    for l in range(len(weights) - 1, -1, -1):
        grads[l] = cache["inputs"][l].T @ dz
        if l > 0:
            dp = dz @ weights[l].T
            dh = mat_t @ dp
            dz = dh * (cache["pre"][l - 1] > 0)
    return grads


def gcn_forward(prop: Prop, X: np.ndarray, weights: list[np.ndarray],
                activate_output: bool = False) -> np.ndarray:
    """Symmetric-normalized convolution; ReLU between layers, identity at output."""
    return _matrix_forward(prop, X, weights, activate_output, want_cache=False)


def sage_forward(prop: Prop, X: np.ndarray, weights: list[np.ndarray],
                 activate_output: bool = False) -> np.ndarray:
    """Mean aggregation over the closed neighborhood, then a linear map."""
    return _matrix_forward(prop, X, weights, activate_output, want_cache=False)


def gat_attention(prop: Prop, h: np.ndarray, w: np.ndarray, a: np.ndarray) -> np.ndarray:
    """Attention coefficients per directed edge (grouped by target node)."""
    z = h @ w
    hidden = w.shape[1]
    a1, a2 = a[:hidden], a[hidden:]
    scores = z @ a1
    scores = scores[prop.tgt] + (z @ a2)[prop.src]
    scores = np.where(scores > 0, scores, _LEAKY_SLOPE * scores)
    return _segment_softmax(scores, prop.indptr)


def _gat_layer_forward(prop: Prop, h, w, a, want_cache: bool):
    z = h @ w
    hidden = w.shape[1]
    a1, a2 = a[:hidden], a[hidden:]
    f = z @ a1
    g_ = z @ a2
    e = f[prop.tgt] + g_[prop.src]
    s = np.where(e > 0, e, _LEAKY_SLOPE * e)
    alpha = _segment_softmax(s, prop.indptr)
    out = np.zeros_like(z)
    np.add.at(out, prop.tgt, alpha[:, None] * z[prop.src])
    if not want_cache:
        return out, None
    return out, {"h": h, "z": z, "e": e, "alpha": alpha, "a1": a1, "a2": a2, "w": w}


def _gat_layer_backward(prop: Prop, cache, dout):
    z, alpha = cache["z"], cache["alpha"]
    dalpha = (z[cache["src_idx"]] * dout[cache["tgt_idx"]]).sum(axis=1)
    dz = np.zeros_like(z)
    np.add.at(dz, cache["src_idx"], alpha[:, None] * dout[cache["tgt_idx"]])
    seg_dot = np.add.reduceat(alpha * dalpha, cache["indptr"][:-1])
    seg_id = np.repeat(np.arange(len(cache["indptr"]) - 1), np.diff(cache["indptr"]))
    ds = alpha * (dalpha - seg_dot[seg_id])
    de = ds * np.where(cache["e"] > 0, 1.0, _LEAKY_SLOPE)
    df = np.zeros(len(z))
    dg = np.zeros(len(z))
    np.add.at(df, cache["tgt_idx"], de)
    np.add.at(dg, cache["src_idx"], de)
    da1 = z.T @ df
    da2 = z.T @ dg
    dz += df[:, None] * cache["a1"][None, :] + dg[:, None] * cache["a2"][None, :]
    dw = cache["h"].T @ dz
    dh = dz @ cache["w"].T
    return dw, np.concatenate([da1, da2]), dh


def gat_forward(prop: Prop, X: np.ndarray, weights: list[np.ndarray],
                attentions: list[np.ndarray], activate_output: bool = False) -> np.ndarray:
    h = X
    last = len(weights) - 1
    for l, (w, a) in enumerate(zip(weights, attentions)):
        out, _ = _gat_layer_forward(prop, h, w, a, want_cache=False)
        h = _relu(out) if (l < last or activate_output) else out
    return h


def _gat_forward_cached(prop: Prop, X, weights, attentions):
    h = X
    caches = []
    last = len(weights) - 1
    for l, (w, a) in enumerate(zip(weights, attentions)):
        out, cache = _gat_layer_forward(prop, h, w, a, want_cache=True)
        cache["tgt_idx"] = prop.tgt
        cache["src_idx"] = prop.src
        cache["indptr"] = prop.indptr
        cache["out_pre"] = out
        caches.append(cache)
        h = _relu(out) if l < last else out
    return h, caches


def _gat_backward(prop: Prop, caches, dlogits):
    dws, das = [], []
    dout = dlogits
    for l in range(len(caches) - 1, -1, -1):
        dw, da, dh = _gat_layer_backward(prop, caches[l], dout)
        dws.append(dw)
        das.append(da)
        if l > 0:
            dout = dh * (caches[l - 1]["out_pre"] > 0)
    return dws[::-1], das[::-1]


# -- loss and training --------------------------------------------------------------


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    ex = np.exp(shifted)
    return ex / ex.sum(axis=1, keepdims=True)


def cross_entropy(logits: np.ndarray, labels: np.ndarray, mask: np.ndarray):
    """Mean CE over masked rows; returns (loss, dlogits)."""
    rows = np.flatnonzero(mask)
    if rows.size == 0:
        raise ParameterError("no labeled rows in the loss")
    probs = softmax(logits[rows])
    picked = probs[np.arange(rows.size), labels[rows]]
    loss = float(-np.log(np.maximum(picked, 1e-300)).mean())
    dlogits = np.zeros_like(logits)
    d = probs.copy()
    d[np.arange(rows.size), labels[rows]] -= 1.0
    dlogits[rows] = d / rows.size
    return loss, dlogits


def model_logits(model: TrainedModel, prop: Prop, X: np.ndarray) -> np.ndarray:
    if model.backbone == "gat":
        return gat_forward(prop, X, model.weights, model.attentions)
    if model.backbone == "gcn":
        return gcn_forward(prop, X, model.weights)
    if model.backbone == "sage":
        return sage_forward(prop, X, model.weights)
    raise ParameterError(f"unknown backbone {model.backbone!r}")


def loss_and_grads(backbone: str, prop: Prop, X: np.ndarray, params: list[np.ndarray],
                   labels: np.ndarray, mask: np.ndarray):
    """Forward + backward pass; params = weights then attention vectors."""
    if backbone == "gat":
        n_layers = len(params) // 2
        weights, attentions = params[:n_layers], params[n_layers:]
        logits, caches = _gat_forward_cached(prop, X, weights, attentions)
        loss, dlogits = cross_entropy(logits, labels, mask)
        dws, das = _gat_backward(prop, caches, dlogits)
        return loss, dws + das
    weights = params
    logits, cache = _matrix_forward(prop, X, weights, False, want_cache=True)
    loss, dlogits = cross_entropy(logits, labels, mask)
    grads = _matrix_backward(prop, weights, cache, dlogits)
    return loss, grads


def init_params(backbone: str, in_dim: int, hidden: int, out_dim: int,
                seed: int) -> list[np.ndarray]:
    rng = np.random.default_rng([seed & 0x7FFFFFFF, 1])
    dims = [(in_dim, hidden), (hidden, out_dim)]
    weights = []
    for fan_in, fan_out in dims:
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
    if backbone != "gat":
        return weights
    attentions = []
    for _, fan_out in dims:
        limit = np.sqrt(6.0 / (2 * fan_out + 1))
        attentions.append(rng.uniform(-limit, limit, size=2 * fan_out))
    return weights + attentions


def adam_step(params: list[np.ndarray], grads: list[np.ndarray], state: AdamState,
              lr: float, weight_decay: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> None:
    state.t += 1
    for p, g, m, v in zip(params, grads, state.m, state.v):
        g = g + weight_decay * p
        m *= beta1
        m += (1 - beta1) * g
        v *= beta2
        v += (1 - beta2) * g * g
        mhat = m / (1 - beta1**state.t)
        vhat = v / (1 - beta2**state.t)
        p -= lr * mhat / (np.sqrt(vhat) + eps)


def _train_arrays(backbone: str, prop: Prop, X: np.ndarray, labels: np.ndarray,
                  mask: np.ndarray, num_classes: int, hyper: Hyper,
                  seed: int) -> TrainedModel:
    labeled = labels[mask]
    if labeled.size < 2:
        raise ParameterError("need at least 2 labeled nodes to train")
    if np.unique(labeled).size < 2:
        raise ParameterError("degenerate label set: a single class cannot be trained")
    params = init_params(backbone, X.shape[1], hyper.hidden, num_classes, seed)
    state = AdamState.like(params)
    trace = np.empty(hyper.epochs)
    for epoch in range(hyper.epochs):
        loss, grads = loss_and_grads(backbone, prop, X, params, labels, mask)
        if not np.isfinite(loss):
            raise ParameterError(f"training diverged at epoch {epoch}")
        trace[epoch] = loss
        adam_step(params, grads, state, hyper.learning_rate, hyper.weight_decay)
    if backbone == "gat":
        n_layers = len(params) // 2
        weights, attentions = params[:n_layers], params[n_layers:]
    else:
        weights, attentions = params, []
    return TrainedModel(backbone=backbone, weights=weights, attentions=attentions,
                        hyper=hyper, seed=seed, num_classes=num_classes,
                        loss_trace=trace, adam=state)


def mapped_prop(backbone: str, mapped: MappedGraph) -> Prop:
    idx_pairs = np.searchsorted(mapped.cids, mapped.edge_cids)
    return build_prop(backbone, mapped.node_count, idx_pairs, mapped.edge_weights)


def train(mapped: MappedGraph, backbone: str = "gcn", hyper: Hyper = Hyper(),
          seed: int = 0, num_classes: int | None = None) -> TrainedModel:
    """Full-batch training on the mapped graph's voted labels.

    Mapped nodes without a label participate in message passing but not in
    the loss. Deterministic for a fixed seed.
    """
    if num_classes is None:
        num_classes = int(mapped.labels.max(initial=0)) + 1
    prop = mapped_prop(backbone, mapped)
    mask = mapped.labels != UNLABELED
    return _train_arrays(backbone, prop, mapped.features, mapped.labels, mask,
                         num_classes, hyper, seed)


def graph_prop(backbone: str, g: Graph) -> Prop:
    idx_pairs = g.rows(g.edges.reshape(-1)).reshape(-1, 2) if g.edge_count else \
        np.zeros((0, 2), dtype=np.int64)
    return build_prop(backbone, g.node_count, idx_pairs, g.weights)


def train_scratch(g: Graph, split: Split, backbone: str = "gcn", hyper: Hyper = Hyper(),
                  seed: int = 0) -> TrainedModel:
    """Retrain-from-zero baseline on the original graph's training labels."""
    prop = graph_prop(backbone, g)
    mask = np.zeros(g.node_count, dtype=bool)
    mask[g.rows(split.train)] = True
    mask &= g.labels != UNLABELED
    return _train_arrays(backbone, prop, g.features, g.labels, mask,
                         g.num_classes, hyper, seed)


def scratch_predictions(model: TrainedModel, g: Graph, node_ids: np.ndarray) -> list[Prediction]:
    logits = model_logits(model, graph_prop(model.backbone, g), g.features)
    probs = softmax(logits)
    out = []
    for v in node_ids:
        row = probs[g.row(int(v))]
        out.append(Prediction(probs=row, label=int(np.argmax(row))))
    return out


# -- prediction path for original nodes ----------------------------------------------


def destination_community(g: Graph, tables: MappingTables, node_id: int) -> int:
    """Community that will temporarily absorb the node for prediction.

    Majority community among the node's neighbors; ties break toward the
    community with the largest connecting edge weight, then the lowest id.
    Nodes with no mapped neighbor fall back to the nearest centroid.
    """
    if not g.has_node(node_id):
        raise ParameterError(f"unknown node id {node_id}")
    counts: dict[int, int] = {}
    weight_sum: dict[int, float] = {}
    for u, w in zip(g.neighbors(node_id).tolist(), g.neighbor_weights(node_id).tolist()):
        cid = tables.membership.get(int(u))
        if cid is None or cid not in tables.records:
            continue
        counts[cid] = counts.get(cid, 0) + 1
        weight_sum[cid] = weight_sum.get(cid, 0.0) + w
    if counts:
        return min(counts, key=lambda c: (-counts[c], -weight_sum[c], c))
    x = g.features[g.row(node_id)]
    best_cid, best_d = None, np.inf
    for cid in sorted(tables.records):
        d = float(np.linalg.norm(tables.records[cid].centroid - x))
        if d < best_d - 1e-15:
            best_cid, best_d = cid, d
    if best_cid is None:
        raise ParameterError("mapped graph has no communities")
    return best_cid


def predict_original(g: Graph, tables: MappingTables, mapped: MappedGraph,
                     model: TrainedModel, node_id: int,
                     prop: Prop | None = None) -> Prediction:
    """Prediction for an original-graph node through its destination community.

    The node's feature is fused into the destination centroid as a running
    mean for one forward pass; the mapped graph is restored bit-for-bit
    afterwards.
    """
    cid = destination_community(g, tables, node_id)
    idx = mapped.index_of(cid)
    if prop is None:
        prop = mapped_prop(model.backbone, mapped)
    n_i = len(tables.records[cid].members)
    features = mapped.features.copy()
    features[idx] = (n_i * features[idx] + g.features[g.row(node_id)]) / (n_i + 1)
    logits = model_logits(model, prop, features)
    probs = softmax(logits[idx : idx + 1])[0]
    return Prediction(probs=probs, label=int(np.argmax(probs)))


def predict_many(g: Graph, tables: MappingTables, mapped: MappedGraph,
                 model: TrainedModel, node_ids) -> list[Prediction]:
    prop = mapped_prop(model.backbone, mapped)
    return [predict_original(g, tables, mapped, model, int(v), prop=prop)
            for v in node_ids]


# -- checkpointing ---------------------------------------------------------------------


_SEC_MODEL = b"MODL"


def model_sections(model: TrainedModel) -> list[tuple[bytes, bytes]]:
    meta = serialize.pack_json({
        "backbone": model.backbone,
        "hidden": model.hyper.hidden,
        "learning_rate": model.hyper.learning_rate,
        "weight_decay": model.hyper.weight_decay,
        "epochs": model.hyper.epochs,
        "seed": model.seed,
        "num_classes": model.num_classes,
        "n_weights": len(model.weights),
        "n_attentions": len(model.attentions),
    })
    blob = [struct.pack("<Q", len(meta)), meta]
    for arr in model.weights + model.attentions + [model.loss_trace]:
        blob.append(serialize.pack_array(arr))
    return [(_SEC_MODEL, b"".join(blob))]


def save_model(model: TrainedModel, path) -> None:
    serialize.write_container(path, model_sections(model))


def load_model(path) -> TrainedModel:
    payload = serialize.require_section(serialize.read_container(path), _SEC_MODEL, path)
    (meta_len,) = struct.unpack("<Q", payload[:8])
    meta = serialize.unpack_json(payload[8 : 8 + meta_len])
    off = 8 + meta_len
    arrays = []
    for _ in range(meta["n_weights"] + meta["n_attentions"] + 1):
        arr, off = serialize.unpack_array(payload, off)
        arrays.append(arr)
    weights = arrays[: meta["n_weights"]]
    attentions = arrays[meta["n_weights"] : meta["n_weights"] + meta["n_attentions"]]
    hyper = Hyper(hidden=meta["hidden"], learning_rate=meta["learning_rate"],
                  weight_decay=meta["weight_decay"], epochs=meta["epochs"])
    return TrainedModel(backbone=meta["backbone"], weights=weights, attentions=attentions,
                        hyper=hyper, seed=meta["seed"], num_classes=meta["num_classes"],
                        loss_trace=arrays[-1])
