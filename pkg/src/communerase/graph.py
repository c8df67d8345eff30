"""Immutable undirected attributed graph with stable node ids.

Node ids are dense integers assigned at load time and never renumbered:
removing nodes keeps every survivor's id, so partitions, mapping tables,
and deletion requests stay valid across graph versions. External
identifiers from the source files live in a side table.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import serialize
from .errors import IngestionError, ParameterError, SerializationError

UNLABELED = -1


@dataclass(frozen=True)
class Graph:
    """Undirected weighted graph over a set of stable integer node ids.

    ``ids`` is sorted ascending; row i of ``features``/``labels`` belongs to
    node ``ids[i]``. ``edges`` holds canonical (u, v) id pairs with u < v,
    sorted lexicographically, no self-loops, no duplicates.
    """

    ids: np.ndarray            # (n,) int64, sorted
    edges: np.ndarray          # (m, 2) int64, canonical order
    weights: np.ndarray        # (m,) float64, positive
    features: np.ndarray       # (n, d) float64
    labels: np.ndarray         # (n,) int64, UNLABELED for missing
    num_classes: int
    external_ids: np.ndarray   # (n,) int64 identifiers from the source files

    # derived, filled in __post_init__
    _row_of: np.ndarray = field(init=False, repr=False, compare=False)
    _indptr: np.ndarray = field(init=False, repr=False, compare=False)
    _nbr_ids: np.ndarray = field(init=False, repr=False, compare=False)
    _nbr_w: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        n = len(self.ids)
        if self.features.shape[0] != n or self.labels.shape[0] != n:
            raise IngestionError("feature/label row count does not match node count")
        if not np.all(np.isfinite(self.features)):
            raise IngestionError("non-finite feature value")
        if self.labels.size and self.labels.max(initial=UNLABELED) >= self.num_classes:
            raise IngestionError("label id out of range")
        max_id = int(self.ids[-1]) if n else -1
        row_of = np.full(max_id + 1, -1, dtype=np.int64)
        row_of[self.ids] = np.arange(n, dtype=np.int64)
        # CSR over rows for neighbor iteration; both directions.
        m = len(self.edges)
        if m:
            src = row_of[self.edges[:, 0]]
            dst = row_of[self.edges[:, 1]]
            heads = np.concatenate([src, dst])
            tails = np.concatenate([dst, src])
            wv = np.concatenate([self.weights, self.weights])
            order = np.lexsort((tails, heads))
            heads, tails, wv = heads[order], tails[order], wv[order]
            indptr = np.zeros(n + 1, dtype=np.int64)
            np.add.at(indptr, heads + 1, 1)
            np.cumsum(indptr, out=indptr)
            nbr_ids = self.ids[tails]
        else:
            indptr = np.zeros(n + 1, dtype=np.int64)
            nbr_ids = np.empty(0, dtype=np.int64)
            wv = np.empty(0, dtype=np.float64)
        for name, value in (
            ("_row_of", row_of),
            ("_indptr", indptr),
            ("_nbr_ids", nbr_ids),
            ("_nbr_w", wv),
        ):
            object.__setattr__(self, name, value)
        for arr in (self.ids, self.edges, self.weights, self.features, self.labels,
                    self.external_ids, row_of, indptr, nbr_ids, wv):
            arr.setflags(write=False)

    # -- basic queries ------------------------------------------------------

    @property
    def node_count(self) -> int:
        return len(self.ids)

    @property
    def edge_count(self) -> int:
        return len(self.edges)

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    @property
    def total_edge_weight(self) -> float:
        return float(self.weights.sum())

    def row(self, node_id: int) -> int:
        """Feature-matrix row of a node id; -1 if absent."""
        if 0 <= node_id < len(self._row_of):
            return int(self._row_of[node_id])
        return -1

    def has_node(self, node_id: int) -> bool:
        return self.row(node_id) >= 0

    def rows(self, node_ids: np.ndarray) -> np.ndarray:
        return self._row_of[np.asarray(node_ids, dtype=np.int64)]

    def neighbors(self, node_id: int) -> np.ndarray:
        """Sorted neighbor ids of a node."""
        r = self.row(node_id)
        if r < 0:
            raise ParameterError(f"unknown node id {node_id}")
        return self._nbr_ids[self._indptr[r] : self._indptr[r + 1]]

    def neighbor_weights(self, node_id: int) -> np.ndarray:
        r = self.row(node_id)
        return self._nbr_w[self._indptr[r] : self._indptr[r + 1]]

    def degrees(self) -> np.ndarray:
        """Weighted degree per row."""
        counts = np.diff(self._indptr)
        heads = np.repeat(np.arange(self.node_count), counts)
        return np.bincount(heads, weights=self._nbr_w, minlength=self.node_count)

    def degree_of(self, node_id: int) -> float:
        r = self.row(node_id)
        return float(self._nbr_w[self._indptr[r] : self._indptr[r + 1]].sum())

    def label_of(self, node_id: int) -> int:
        return int(self.labels[self.row(node_id)])

    def equal_to(self, other: "Graph") -> bool:
        """Structural equality including floating-point bit equality."""
        return (
            np.array_equal(self.ids, other.ids)
            and np.array_equal(self.edges, other.edges)
            and np.array_equal(self.weights, other.weights)
            and np.array_equal(self.features, other.features)
            and np.array_equal(self.labels, other.labels)
            and self.num_classes == other.num_classes
            and np.array_equal(self.external_ids, other.external_ids)
        )


def _canonical_edges(pairs: np.ndarray, weights: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Drop self-loops, orient u < v, deduplicate keeping the first weight."""
    if len(pairs) == 0:
        return np.empty((0, 2), dtype=np.int64), np.empty(0, dtype=np.float64)
    pairs = pairs.astype(np.int64, copy=True)
    keep = pairs[:, 0] != pairs[:, 1]
    pairs, weights = pairs[keep], weights[keep]
    lo = np.minimum(pairs[:, 0], pairs[:, 1])
    hi = np.maximum(pairs[:, 0], pairs[:, 1])
    order = np.lexsort((hi, lo))
    lo, hi, weights = lo[order], hi[order], weights[order]
    if len(lo):
        first = np.ones(len(lo), dtype=bool)
        first[1:] = (lo[1:] != lo[:-1]) | (hi[1:] != hi[:-1])
        lo, hi, weights = lo[first], hi[first], weights[first]
    return np.column_stack([lo, hi]), weights.astype(np.float64)


def build_graph(
    edges: np.ndarray,
    features: np.ndarray,
    labels: np.ndarray,
    *,
    weights: np.ndarray | None = None,
    ids: np.ndarray | None = None,
    external_ids: np.ndarray | None = None,
    num_classes: int | None = None,
) -> Graph:
    """Construct a Graph from raw arrays, canonicalizing the edge list."""
    features = np.array(features, dtype=np.float64)
    labels = np.array(labels, dtype=np.int64)
    n = features.shape[0]
    if ids is None:
        ids = np.arange(n, dtype=np.int64)
    else:
        ids = np.array(ids, dtype=np.int64)
    if external_ids is None:
        external_ids = ids.copy()
    else:
        external_ids = np.array(external_ids, dtype=np.int64)
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    if weights is None:
        weights = np.ones(len(edges), dtype=np.float64)
    edges, weights = _canonical_edges(edges, np.asarray(weights, dtype=np.float64))
    if num_classes is None:
        num_classes = int(labels.max(initial=UNLABELED)) + 1
    return Graph(
        ids=ids,
        edges=edges,
        weights=weights,
        features=features,
        labels=labels,
        num_classes=max(num_classes, 0),
        external_ids=external_ids,
    )


# -- ingestion ---------------------------------------------------------------


def load_graph(edge_path: str | Path, feature_path: str | Path, label_path: str | Path) -> Graph:
    """Load a graph from an edge list, a feature CSV, and a label file.

    Edge file: one whitespace-separated ``u v`` pair per line, ids indexing
    feature rows. Feature file: one comma-separated real vector per node, in
    id order. Label file: one integer class id per node (-1 = unlabeled).
    Directed input edges are symmetrized; duplicates and self-loops dropped.
    """
    feature_path, label_path = Path(feature_path), Path(label_path)
    rows = []
    dim = None
    for lineno, line in enumerate(feature_path.read_text().splitlines(), start=1):
        if not line.strip():
            continue
        try:
            vec = np.array([float(x) for x in line.split(",")], dtype=np.float64)
        except ValueError as exc:
            raise IngestionError(f"{feature_path}:{lineno}: unparsable feature row: {exc}") from exc
        if dim is None:
            dim = len(vec)
        elif len(vec) != dim:
            raise IngestionError(
                f"{feature_path}:{lineno}: expected {dim} features, found {len(vec)}"
            )
        if not np.all(np.isfinite(vec)):
            raise IngestionError(f"{feature_path}:{lineno}: non-finite feature value")
        rows.append(vec)
    if not rows:
        raise IngestionError(f"{feature_path}: no feature rows")
    features = np.vstack(rows)
    n = len(features)

    labels = []
    for lineno, line in enumerate(label_path.read_text().splitlines(), start=1):
        if not line.strip():
            continue
        try:
            labels.append(int(line.strip()))
        except ValueError as exc:
            raise IngestionError(f"{label_path}:{lineno}: unparsable label: {exc}") from exc
    if len(labels) != n:
        raise IngestionError(
            f"{label_path}: {len(labels)} labels for {n} feature rows (line {min(len(labels), n) + 1})"
        )
    labels = np.asarray(labels, dtype=np.int64)
    if labels.min(initial=0) < UNLABELED:
        raise IngestionError(f"{label_path}: negative label below {UNLABELED}")

    edge_path = Path(edge_path)
    pairs = []
    for lineno, line in enumerate(edge_path.read_text().splitlines(), start=1):
        parts = line.split()
        if not parts:
            continue
        if len(parts) != 2:
            raise IngestionError(f"{edge_path}:{lineno}: expected 'u v', got {line!r}")
        try:
            u, v = int(parts[0]), int(parts[1])
        except ValueError as exc:
            raise IngestionError(f"{edge_path}:{lineno}: non-integer node id: {exc}") from exc
        if not (0 <= u < n and 0 <= v < n):
            raise IngestionError(
                f"{edge_path}:{lineno}: node id outside [0, {n}) in pair ({u}, {v})"
            )
        pairs.append((u, v))
    edges = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    return build_graph(edges, features, labels)


# -- node removal and subgraphs ----------------------------------------------


def remove_nodes(g: Graph, victims) -> Graph:
    """Return the graph without the victim nodes and their incident edges.

    Surviving node ids are unchanged. Removing the empty set returns an
    equal graph.
    """
    victims = np.asarray(sorted(set(int(v) for v in victims)), dtype=np.int64)
    if victims.size == 0:
        return g
    unknown = [int(v) for v in victims if not g.has_node(int(v))]
    if unknown:
        raise ParameterError(f"unknown node ids: {unknown}")
    keep_mask = np.ones(g.node_count, dtype=bool)
    keep_mask[g.rows(victims)] = False
    ids = g.ids[keep_mask]
    if g.edge_count:
        victim_set = set(victims.tolist())
        edge_keep = np.array(
            [u not in victim_set and v not in victim_set for u, v in g.edges.tolist()],
            dtype=bool,
        )
        edges = g.edges[edge_keep].copy()
        weights = g.weights[edge_keep].copy()
    else:
        edges, weights = g.edges.copy(), g.weights.copy()
    return Graph(
        ids=ids.copy(),
        edges=edges,
        weights=weights,
        features=g.features[keep_mask].copy(),
        labels=g.labels[keep_mask].copy(),
        num_classes=g.num_classes,
        external_ids=g.external_ids[keep_mask].copy(),
    )


def induced_subgraph(g: Graph, keep_ids) -> Graph:
    """Subgraph induced on the given ids (ids preserved)."""
    keep = set(int(v) for v in keep_ids)
    victims = [int(v) for v in g.ids.tolist() if v not in keep]
    return remove_nodes(g, victims)


# -- splitting ----------------------------------------------------------------


@dataclass(frozen=True)
class Split:
    train: np.ndarray  # sorted node ids
    test: np.ndarray   # sorted node ids
    seed: int


def split_nodes(g: Graph, train_fraction: float, seed: int) -> Split:
    """Stratified train/test split over the labeled nodes.

    Deterministic for a fixed seed. Per-class train counts follow the
    largest-remainder rule so the global train size is exactly
    round(fraction * labeled_count).
    """
    if not (0.0 < train_fraction < 1.0):
        raise ParameterError(f"train_fraction must be in (0,1), got {train_fraction}")
    labeled_rows = np.flatnonzero(g.labels != UNLABELED)
    if len(labeled_rows) < 2:
        raise ParameterError("need at least 2 labeled nodes to split")
    rng = np.random.default_rng(seed)
    total_train = int(round(train_fraction * len(labeled_rows)))
    classes = np.unique(g.labels[labeled_rows])
    base_counts, remainders = {}, []
    for c in classes:
        size = int((g.labels[labeled_rows] == c).sum())
        exact = train_fraction * size
        base_counts[int(c)] = int(np.floor(exact))
        remainders.append((-(exact - np.floor(exact)), int(c)))
    leftover = total_train - sum(base_counts.values())
    for _, c in sorted(remainders):
        if leftover <= 0:
            break
        base_counts[c] += 1
        leftover -= 1
    train_ids, test_ids = [], []
    for c in classes:
        members = g.ids[labeled_rows[g.labels[labeled_rows] == c]]
        perm = rng.permutation(len(members))
        take = min(base_counts[int(c)], len(members))
        chosen = set(members[perm[:take]].tolist())
        for m in members.tolist():
            (train_ids if m in chosen else test_ids).append(m)
    return Split(
        train=np.asarray(sorted(train_ids), dtype=np.int64),
        test=np.asarray(sorted(test_ids), dtype=np.int64),
        seed=seed,
    )


# -- serialization ------------------------------------------------------------

_SEC_HEADER = b"GHDR"
_SEC_EDGES = b"GEDG"
_SEC_FEATS = b"GFTR"
_SEC_LABEL = b"GLBL"


def graph_sections(g: Graph) -> list[tuple[bytes, bytes]]:
    header = struct.pack("<QQQq", g.node_count, g.edge_count, g.features.shape[1], g.num_classes)
    header += serialize.pack_array(g.ids) + serialize.pack_array(g.external_ids)
    edges = serialize.pack_array(g.edges) + serialize.pack_array(g.weights)
    return [
        (_SEC_HEADER, header),
        (_SEC_EDGES, edges),
        (_SEC_FEATS, serialize.pack_array(g.features)),
        (_SEC_LABEL, serialize.pack_array(g.labels)),
    ]


def graph_from_sections(sections: dict[bytes, bytes], path="<buffer>") -> Graph:
    header = serialize.require_section(sections, _SEC_HEADER, path)
    n, m, d, num_classes = struct.unpack("<QQQq", header[:32])
    ids, off = serialize.unpack_array(header, 32)
    external, _ = serialize.unpack_array(header, off)
    payload = serialize.require_section(sections, _SEC_EDGES, path)
    edges, off = serialize.unpack_array(payload)
    weights, _ = serialize.unpack_array(payload, off)
    features, _ = serialize.unpack_array(serialize.require_section(sections, _SEC_FEATS, path))
    labels, _ = serialize.unpack_array(serialize.require_section(sections, _SEC_LABEL, path))
    if features.shape != (n, d) or edges.shape != (m, 2):
        raise SerializationError(f"{path}: header does not match section contents")
    return Graph(
        ids=ids,
        edges=edges,
        weights=weights,
        features=features,
        labels=labels,
        num_classes=int(num_classes),
        external_ids=external,
    )


def save_graph(g: Graph, path: str | Path) -> None:
    serialize.write_container(path, graph_sections(g))


def load_saved(path: str | Path) -> Graph:
    return graph_from_sections(serialize.read_container(path), path)
