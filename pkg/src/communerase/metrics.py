"""Evaluation metrics: macro F1, membership-inference AUC, information
retention, and partition conductance summaries."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .community import CommunityPartition, conductance
from .errors import ParameterError
from .gnn import AdamState, adam_step
from .graph import Graph


def macro_f1(predictions, truths, num_classes: int | None = None) -> float:
    """Unweighted mean of per-class F1 over the classes present in truths.

    A class with no predicted and no true positives contributes 0.
    """
    preds = np.asarray(predictions, dtype=np.int64)
    truth = np.asarray(truths, dtype=np.int64)
    if preds.shape != truth.shape:
        raise ParameterError("predictions and truths must have equal length")
    if preds.size == 0:
        raise ParameterError("empty inputs")
    scores = []
    for c in np.unique(truth):
        tp = int(((preds == c) & (truth == c)).sum())
        fp = int(((preds == c) & (truth != c)).sum())
        fn = int(((preds != c) & (truth == c)).sum())
        denom = 2 * tp + fp + fn
        scores.append(2.0 * tp / denom if denom else 0.0)
    return float(np.mean(scores))


def mia_auc(member_scores, nonmember_scores) -> float:
    """Probability a random member outscores a random non-member; ties 0.5.

    Computed from average ranks, so it is exact for tied values.
    """
    a = np.asarray(member_scores, dtype=np.float64)
    b = np.asarray(nonmember_scores, dtype=np.float64)
    if a.size == 0 or b.size == 0:
        raise ParameterError("both score sets must be non-empty")
    scores = np.concatenate([a, b])
    order = np.argsort(scores, kind="stable")
    ranks = np.empty(len(scores))
    i = 0
    while i < len(scores):
        j = i
        while j < len(scores) and scores[order[j]] == scores[order[i]]:
            j += 1
        ranks[order[i:j]] = (i + j + 1) / 2.0
        i = j
    member_rank_sum = ranks[: a.size].sum()
    return float((member_rank_sum - a.size * (a.size + 1) / 2.0) / (a.size * b.size))


def attack_score(probs: np.ndarray) -> float:
    """Confidence-based membership score: max softmax plus entropy margin."""
    p = np.asarray(probs, dtype=np.float64)
    k = p.size
    if k < 2:
        return float(p.max())
    safe = np.maximum(p, 1e-300)
    entropy = float(-(safe * np.log(safe)).sum())
    return float(p.max()) + (1.0 - entropy / np.log(k))


# -- information retention -----------------------------------------------------


@dataclass(frozen=True)
class AutoencoderConfig:
    hidden: int | None = None        # defaults to min(64, feature_dim)
    epochs: int = 200
    learning_rate: float = 0.01
    weight_decay: float = 0.001


def train_autoencoder(features: np.ndarray, cfg: AutoencoderConfig, seed: int):
    """Linear encoder/decoder pair minimizing mean squared reconstruction."""
    X = np.asarray(features, dtype=np.float64)
    n, d = X.shape
    hidden = cfg.hidden or min(64, d)
    rng = np.random.default_rng([seed & 0x7FFFFFFF, 2])
    limit_e = np.sqrt(6.0 / (d + hidden))
    limit_d = np.sqrt(6.0 / (hidden + d))
    enc = rng.uniform(-limit_e, limit_e, size=(d, hidden))
    dec = rng.uniform(-limit_d, limit_d, size=(hidden, d))
    params = [enc, dec]
    state = AdamState.like(params)
    scale = 2.0 / (n * d)
    for _ in range(cfg.epochs):
        z = X @ enc
        resid = z @ dec - X
        dr = scale * resid
        grads = [X.T @ (dr @ dec.T), z.T @ dr]
        adam_step(params, grads, state, cfg.learning_rate, cfg.weight_decay)
    return enc, dec


def info_retention(g: Graph, subgraph_sets, cfg: AutoencoderConfig | None = None,
                   seed: int = 0) -> float:
    """Mean cosine similarity between reconstructed feature means.

    One shared autoencoder reconstructs the whole graph's features; each
    subgraph is scored by the cosine between its reconstructed mean and the
    reconstructed mean of the full graph.
    """
    subgraph_sets = list(subgraph_sets)
    if not subgraph_sets:
        raise ParameterError("need at least one subgraph")
    cfg = cfg or AutoencoderConfig()
    enc, dec = train_autoencoder(g.features, cfg, seed)
    reconstructed = g.features @ enc @ dec
    base = reconstructed.mean(axis=0)
    base_norm = float(np.linalg.norm(base))
    if base_norm == 0.0:
        raise ParameterError("degenerate cosine: zero reconstructed mean")
    sims = []
    for nodes in subgraph_sets:
        rows = g.rows(np.asarray(sorted(int(v) for v in nodes), dtype=np.int64))
        if rows.size == 0:
            raise ParameterError("empty subgraph")
        mean_vec = reconstructed[rows].mean(axis=0)
        norm = float(np.linalg.norm(mean_vec))
        if norm == 0.0:
            raise ParameterError("degenerate cosine: zero reconstructed mean")
        sims.append(float(base @ mean_vec / (base_norm * norm)))
    return float(np.mean(sims))


def mean_conductance(g: Graph, p: CommunityPartition) -> float:
    values = [conductance(g, p.communities[c]) for c in sorted(p.communities)]
    return float(np.mean(values))
