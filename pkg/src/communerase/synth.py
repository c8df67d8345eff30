"""Deterministic synthetic graph generators.

``sbm`` builds planted-partition graphs for tests and partition-quality
comparisons. ``citation_benchmark`` builds a citation-network-like graph at a
requested scale (sparse binary bag-of-words features, imbalanced classes,
homophilous community structure) for desk-scale benchmarking when the real
datasets are not on disk.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .graph import Graph, build_graph


def sbm(block_sizes, p_in: float, p_out: float, seed: int, feature_dim: int = 8,
        feature_separation: float = 3.0, feature_noise: float = 1.0) -> Graph:
    """Stochastic block model with Gaussian per-block feature centers.

    Labels equal block ids; features are the block center plus isotropic
    noise, so both structure and features carry the block signal.
    """
    rng = np.random.default_rng(seed)
    sizes = list(block_sizes)
    n = sum(sizes)
    starts = np.cumsum([0] + sizes)
    labels = np.concatenate([np.full(s, b, dtype=np.int64) for b, s in enumerate(sizes)])
    edges = []
    for b1 in range(len(sizes)):
        for b2 in range(b1, len(sizes)):
            p = p_in if b1 == b2 else p_out
            if p <= 0:
                continue
            for u in range(starts[b1], starts[b1 + 1]):
                lo = u + 1 if b1 == b2 else starts[b2]
                draws = rng.random(starts[b2 + 1] - lo)
                for k in np.flatnonzero(draws < p):
                    edges.append((u, lo + k))
    centers = rng.normal(scale=feature_separation, size=(len(sizes), feature_dim))
    features = centers[labels] + rng.normal(scale=feature_noise, size=(n, feature_dim))
    return build_graph(np.asarray(edges, dtype=np.int64).reshape(-1, 2),
                       features, labels, num_classes=len(sizes))


def two_block_toy(seed: int = 0) -> Graph:
    """The 40-node smoke-test graph shipped with the CLI."""
    return sbm([20, 20], p_in=0.3, p_out=0.02, seed=seed, feature_dim=4)


def citation_benchmark(
    seed: int = 0,
    n: int = 2708,
    num_classes: int = 7,
    feature_dim: int = 1433,
    target_edges: int = 5429,
    communities: int = 90,
    intra_fraction: float = 0.82,
    dominant_prob: float = 0.9,
    words_per_node: int = 18,
    topic_words: int = 110,
    topic_prob: float = 0.72,
) -> Graph:
    """Citation-network-like benchmark graph at a configurable scale.

    Nodes live in small homophilous communities, each dominated by one
    class; features are sparse binary indicator vectors drawn mostly from
    per-class word pools. Deterministic for a fixed seed.
    """
    rng = np.random.default_rng(seed)
    class_weights = np.array([818, 426, 418, 351, 298, 217, 180], dtype=np.float64)
    if num_classes != len(class_weights):
        class_weights = rng.uniform(0.5, 1.5, size=num_classes)
    class_weights = class_weights / class_weights.sum()

    # community sizes: lognormal, normalized to n
    raw = rng.lognormal(mean=0.0, sigma=0.9, size=communities)
    sizes = np.maximum(2, np.round(raw / raw.sum() * n).astype(np.int64))
    while sizes.sum() > n:
        sizes[int(np.argmax(sizes))] -= 1
    while sizes.sum() < n:
        sizes[int(rng.integers(communities))] += 1

    community_class = rng.choice(num_classes, size=communities, p=class_weights)
    community_of = np.repeat(np.arange(communities), sizes)
    labels = np.empty(n, dtype=np.int64)
    for v in range(n):
        dominant = community_class[community_of[v]]
        if rng.random() < dominant_prob:
            labels[v] = dominant
        else:
            labels[v] = rng.integers(num_classes)

    starts = np.cumsum(np.concatenate([[0], sizes]))
    intra_target = int(round(target_edges * intra_fraction))
    edges: set[tuple[int, int]] = set()
    # intra-community edges, allocated proportionally to community size
    alloc = np.maximum(sizes - 1, 0)
    alloc = np.round(alloc / alloc.sum() * intra_target).astype(np.int64)
    for c in range(communities):
        lo, hi = int(starts[c]), int(starts[c + 1])
        if hi - lo < 2:
            continue
        # spanning chain keeps communities connected, remainder random pairs
        order = rng.permutation(np.arange(lo, hi))
        for a, b in zip(order, order[1:]):
            edges.add((min(a, b), max(a, b)))
        want = int(alloc[c]) - (hi - lo - 1)
        tries = 0
        while want > 0 and tries < max(20, 8 * int(alloc[c])):
            u, v = rng.integers(lo, hi, size=2)
            tries += 1
            if u == v:
                continue
            pair = (min(u, v), max(u, v))
            if pair not in edges:
                edges.add(pair)
                want -= 1
    # inter-community edges with class homophily
    inter_target = target_edges - len(edges)
    same_class_pools = {}
    for k in range(num_classes):
        cs = np.flatnonzero(community_class == k)
        if len(cs) >= 2:
            same_class_pools[k] = cs
    tries = 0
    while inter_target > 0 and tries < target_edges * 20:
        tries += 1
        if rng.random() < 0.6 and same_class_pools:
            k = int(rng.choice(list(same_class_pools)))
            c1, c2 = rng.choice(same_class_pools[k], size=2, replace=False)
        else:
            c1, c2 = rng.choice(communities, size=2, replace=False)
        if c1 == c2:
            continue
        u = int(rng.integers(starts[c1], starts[c1 + 1]))
        v = int(rng.integers(starts[c2], starts[c2 + 1]))
        pair = (min(u, v), max(u, v))
        if pair not in edges:
            edges.add(pair)
            inter_target -= 1

    # sparse binary bag-of-words features with per-class word pools
    pools = np.vstack([
        rng.choice(feature_dim, size=topic_words, replace=False)
        for _ in range(num_classes)
    ])
    features = np.zeros((n, feature_dim))
    for v in range(n):
        k = int(rng.poisson(words_per_node - 6)) + 6
        on_topic = rng.random(k) < topic_prob
        words = np.where(
            on_topic,
            pools[labels[v]][rng.integers(0, topic_words, size=k)],
            rng.integers(0, feature_dim, size=k),
        )
        features[v, words] = 1.0

    edge_arr = np.asarray(sorted(edges), dtype=np.int64).reshape(-1, 2)
    return build_graph(edge_arr, features, labels, num_classes=num_classes)


def write_dataset(g: Graph, directory: str | Path) -> dict[str, Path]:
    """Write a graph in the text ingestion format (edges/features/labels)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = {
        "edges": directory / "edges.txt",
        "features": directory / "features.csv",
        "labels": directory / "labels.txt",
    }
    rows = {int(v): i for i, v in enumerate(g.ids)}
    lines = [f"{rows[u]} {rows[v]}" for u, v in g.edges.tolist()]
    paths["edges"].write_text("\n".join(lines) + ("\n" if lines else ""))
    feat_lines = [",".join(repr(x) for x in row) for row in g.features.tolist()]
    paths["features"].write_text("\n".join(feat_lines) + "\n")
    paths["labels"].write_text("\n".join(str(int(x)) for x in g.labels.tolist()) + "\n")
    return paths
