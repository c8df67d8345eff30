"""Build the community-level surrogate graph and its provenance tables.

Each community becomes one mapped node: its feature is the member centroid,
its label the majority vote over the members nearest the centroid in the
principal subspace, and inter-community edges carry a smoothed robustness
score. The tables record enough provenance (members, bases, distances,
thresholds, cross-edge lists) to recompute any community locally when nodes
are deleted.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import serialize
from .community import CommunityPartition
from .errors import ConsistencyError, ParameterError
from .graph import UNLABELED, Graph


@dataclass(frozen=True)
class MapConfig:
    variance_ratio: float = 0.95   # cumulative explained-variance target for the basis
    smoothing_scale: float = 1.0   # lambda in w = lambda * exp(-R) + eta
    smoothing_shift: float = 0.0   # eta
    edge_threshold: float = 0.0    # sigma; mapped edges require w >= sigma
    invert_edge_weight: bool = False

    def __post_init__(self):
        if not (0.0 < self.variance_ratio <= 1.0):
            raise ParameterError("variance_ratio must be in (0, 1]")
        if self.smoothing_scale <= 0.0:
            raise ParameterError("smoothing_scale must be positive")
        if self.smoothing_shift < 0.0:
            raise ParameterError("smoothing_shift must be non-negative")


@dataclass(frozen=True)
class CommunityRecord:
    """Sufficient statistics for one community's mapped node."""

    members: np.ndarray      # sorted node ids
    labeled: np.ndarray      # sorted node ids with a label
    centroid: np.ndarray     # (d,) mapped feature
    basis: np.ndarray        # (d, k) orthonormal principal directions
    explained: np.ndarray    # (k,) explained-variance ratios
    distances: np.ndarray    # per member, aligned with `members`
    tau: float               # gap threshold over the labeled members' distances
    retained: np.ndarray     # sorted member ids with distance <= tau
    label: int               # voted label, UNLABELED if no labeled member


@dataclass(frozen=True)
class MappedGraph:
    """One node per community; edges between communities that share edges."""

    cids: np.ndarray          # sorted community ids
    features: np.ndarray      # (k, d)
    labels: np.ndarray        # (k,), UNLABELED where no member is labeled
    edge_cids: np.ndarray     # (p, 2) community-id pairs, lexicographic
    edge_weights: np.ndarray  # (p,)

    @property
    def node_count(self) -> int:
        return len(self.cids)

    def index_of(self, cid: int) -> int:
        i = int(np.searchsorted(self.cids, cid))
        if i >= len(self.cids) or self.cids[i] != cid:
            raise ParameterError(f"unknown mapped community id {cid}")
        return i

    def equal_to(self, other: "MappedGraph") -> bool:
        return (
            np.array_equal(self.cids, other.cids)
            and np.array_equal(self.features, other.features)
            and np.array_equal(self.labels, other.labels)
            and np.array_equal(self.edge_cids, other.edge_cids)
            and np.array_equal(self.edge_weights, other.edge_weights)
        )


@dataclass
class MappingTables:
    """Provenance linking original nodes to mapped entities."""

    membership: dict[int, int]
    records: dict[int, CommunityRecord]
    cross_edges: dict[tuple[int, int], np.ndarray]  # (ci, cj) -> (e, 3) [u, v, w] rows
    volumes: dict[int, float]
    config: MapConfig

    def tally(self, pair: tuple[int, int]) -> float:
        rows = self.cross_edges.get(pair)
        return float(rows[:, 2].sum()) if rows is not None and len(rows) else 0.0

    def pairs_incident_to(self, cids) -> list[tuple[int, int]]:
        cset = set(cids)
        return sorted(p for p in self.cross_edges if p[0] in cset or p[1] in cset)

    def neighbor_communities(self, node_id: int) -> set[int]:
        """Communities reachable from a node through stored cross edges."""
        own = self.membership[node_id]
        out = set()
        for (ci, cj), rows in self.cross_edges.items():
            if ci != own and cj != own:
                continue
            other = cj if ci == own else ci
            for u, v, _ in rows.tolist():
                if int(u) == node_id or int(v) == node_id:
                    out.add(other)
                    break
        return out


# -- feature fusion -------------------------------------------------------------


def fuse_features(member_features: np.ndarray, variance_ratio: float = 0.95):
    """Centroid, principal basis, and member distances for one community.

    The mapped feature is the member centroid in the original space; member
    distances are Euclidean norms of the centered rows projected onto the
    smallest basis reaching the cumulative explained-variance target, which
    makes them distances to the fusion center in the principal subspace.
    """
    if not (0.0 < variance_ratio <= 1.0):
        raise ParameterError("variance_ratio must be in (0, 1]")
    X = np.asarray(member_features, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ParameterError("empty community")
    n, d = X.shape
    centroid = X.mean(axis=0)
    B = X - centroid
    scatter_trace = float((B * B).sum())
    if scatter_trace <= 0.0:
        basis = np.zeros((d, 0))
        explained = np.zeros(0)
        distances = np.zeros(n)
        return centroid, basis, explained, distances
    if d <= 4 * n:
        S = B.T @ B
        eigvals, eigvecs = np.linalg.eigh(S)
        order = np.argsort(eigvals)[::-1]
        eigvals, eigvecs = eigvals[order], eigvecs[:, order]
        keep = eigvals > 1e-12 * scatter_trace
        eigvals, eigvecs = eigvals[keep], eigvecs[:, keep]
        V = eigvecs
    else:
        G = B @ B.T
        eigvals, eigvecs = np.linalg.eigh(G)
        order = np.argsort(eigvals)[::-1]
        eigvals, eigvecs = eigvals[order], eigvecs[:, order]
        keep = eigvals > 1e-12 * scatter_trace
        eigvals, eigvecs = eigvals[keep], eigvecs[:, keep]
        V = B.T @ (eigvecs / np.sqrt(eigvals))
    if V.shape[1] == 0:
        return centroid, np.zeros((d, 0)), np.zeros(0), np.zeros(n)
    ratios = eigvals / eigvals.sum()
    k = int(np.searchsorted(np.cumsum(ratios), variance_ratio - 1e-12) + 1)
    k = min(max(k, 1), V.shape[1])
    basis = V[:, :k]
    explained = ratios[:k]
    distances = np.linalg.norm(B @ basis, axis=1)
    return centroid, basis, explained, distances


def gap_threshold(distances: np.ndarray) -> float:
    """Distance at the lower edge of the largest consecutive gap.

    With a single value, or all values equal, the threshold is the maximum,
    so every point qualifies.
    """
    ds = np.sort(np.asarray(distances, dtype=np.float64))
    if ds.size == 0:
        raise ParameterError("no distances")
    if ds.size == 1:
        return float(ds[0])
    gaps = np.diff(ds)
    if gaps.max() <= 0.0:
        return float(ds[-1])
    return float(ds[int(np.argmax(gaps))])


def vote_label(distances: np.ndarray, labels: np.ndarray) -> int:
    """Majority label among the members inside the gap threshold.

    Mode ties break toward the smallest class id.
    """
    distances = np.asarray(distances, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if distances.size == 0:
        raise ParameterError("no members to vote")
    if distances.size != labels.size:
        raise ParameterError("distances and labels must align")
    if np.any(distances < 0) or not np.all(np.isfinite(distances)):
        raise ParameterError("distances must be finite and non-negative")
    tau = gap_threshold(distances)
    voters = labels[distances <= tau]
    values, counts = np.unique(voters, return_counts=True)
    return int(values[np.argmax(counts)])  # np.unique sorts, argmax takes first max


# -- edge mapping -----------------------------------------------------------------


def edge_score(tally: float, vol_i: float, vol_j: float, union_size: int) -> float:
    """Robustness of an inter-community connection.

    Degree-normalized edge mass plus a union-size-normalized term; zero
    exactly when no cross edge exists.
    """
    if tally == 0:
        return 0.0
    if tally < 0:
        raise ParameterError("tally must be non-negative")
    if vol_i <= 0.0 or vol_j <= 0.0:
        raise ConsistencyError("community with cross edges has zero volume")
    if union_size <= 0:
        raise ParameterError("union_size must be positive")
    return (tally / np.sqrt(vol_i)) * (tally / np.sqrt(vol_j)) + tally / union_size


def edge_weight(score: float, smoothing_scale: float = 1.0, smoothing_shift: float = 0.0,
                invert: bool = False) -> float:
    """Smoothed edge weight; strictly monotone in the robustness score."""
    if smoothing_scale <= 0.0:
        raise ParameterError("smoothing_scale must be positive")
    if smoothing_shift < 0.0:
        raise ParameterError("smoothing_shift must be non-negative")
    if invert:
        return smoothing_scale * (1.0 - float(np.exp(-score))) + smoothing_shift
    return smoothing_scale * float(np.exp(-score)) + smoothing_shift


# -- whole-graph construction -------------------------------------------------------


def _community_record(g: Graph, members: np.ndarray, variance_ratio: float) -> CommunityRecord:
    members = np.asarray(sorted(int(v) for v in members), dtype=np.int64)
    rows = g.rows(members)
    X = g.features[rows]
    centroid, basis, explained, distances = fuse_features(X, variance_ratio)
    member_labels = g.labels[rows]
    labeled_mask = member_labels != UNLABELED
    labeled = members[labeled_mask]
    if labeled.size:
        tau = gap_threshold(distances[labeled_mask])
        label = vote_label(distances[labeled_mask], member_labels[labeled_mask])
    else:
        tau = float(distances.max(initial=0.0))
        label = UNLABELED
    retained = members[distances <= tau]
    return CommunityRecord(
        members=members,
        labeled=labeled,
        centroid=centroid,
        basis=basis,
        explained=explained,
        distances=distances,
        tau=tau,
        retained=retained,
        label=label,
    )


def community_volume(g: Graph, members: np.ndarray) -> float:
    return float(sum(g.degree_of(int(v)) for v in sorted(members.tolist())))


def mapped_edge_weight(tables: MappingTables, pair: tuple[int, int]) -> float:
    """Weight of a candidate mapped edge from current tallies and volumes."""
    s = tables.tally(pair)
    ci, cj = pair
    union = len(tables.records[ci].members) + len(tables.records[cj].members)
    score = edge_score(s, tables.volumes[ci], tables.volumes[cj], union)
    cfg = tables.config
    return edge_weight(score, cfg.smoothing_scale, cfg.smoothing_shift,
                       cfg.invert_edge_weight)


def build_mapped_graph(g: Graph, p: CommunityPartition,
                       cfg: MapConfig | None = None) -> tuple[MappedGraph, MappingTables]:
    """Map every community to a node and every cross-community tally to an edge.

    Deterministic: communities are processed in sorted id order and edge
    tallies accumulate over the canonical edge list.
    """
    cfg = cfg or MapConfig()
    records: dict[int, CommunityRecord] = {}
    volumes: dict[int, float] = {}
    for cid in sorted(p.communities):
        records[cid] = _community_record(g, p.communities[cid], cfg.variance_ratio)
        volumes[cid] = community_volume(g, p.communities[cid])

    cross: dict[tuple[int, int], list[list[float]]] = {}
    for (u, v), w in zip(g.edges.tolist(), g.weights.tolist()):
        cu, cv = p.assignment[u], p.assignment[v]
        if cu == cv:
            continue
        pair = (cu, cv) if cu < cv else (cv, cu)
        cross.setdefault(pair, []).append([float(u), float(v), w])
    cross_edges = {
        pair: np.asarray(rows, dtype=np.float64) for pair, rows in sorted(cross.items())
    }

    tables = MappingTables(
        membership={int(v): c for c in sorted(p.communities) for v in p.communities[c].tolist()},
        records=records,
        cross_edges=cross_edges,
        volumes=volumes,
        config=cfg,
    )
    mapped = assemble_mapped_graph(tables)
    return mapped, tables


def assemble_mapped_graph(tables: MappingTables) -> MappedGraph:
    """Materialize the mapped graph arrays from the tables."""
    cids = np.asarray(sorted(tables.records), dtype=np.int64)
    if cids.size == 0:
        return MappedGraph(
            cids=cids,
            features=np.zeros((0, 0)),
            labels=np.zeros(0, dtype=np.int64),
            edge_cids=np.zeros((0, 2), dtype=np.int64),
            edge_weights=np.zeros(0),
        )
    features = np.vstack([tables.records[int(c)].centroid for c in cids])
    labels = np.asarray([tables.records[int(c)].label for c in cids], dtype=np.int64)
    pairs, weights = [], []
    for pair in sorted(tables.cross_edges):
        w = mapped_edge_weight(tables, pair)
        if w >= tables.config.edge_threshold:
            pairs.append(pair)
            weights.append(w)
    edge_cids = (np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
                 if pairs else np.zeros((0, 2), dtype=np.int64))
    return MappedGraph(
        cids=cids,
        features=features,
        labels=labels,
        edge_cids=edge_cids,
        edge_weights=np.asarray(weights, dtype=np.float64),
    )


def rebuild_community(tables: MappingTables, g: Graph, cid: int) -> CommunityRecord:
    """Recompute one community's record from its current member list."""
    return _community_record(g, tables.records[cid].members, tables.config.variance_ratio)


# -- summary + serialization ---------------------------------------------------------


def write_summary_csv(mapped: MappedGraph, tables: MappingTables, path: str | Path) -> None:
    lines = ["kind,id_a,id_b,size,tau,label,weight"]
    for c in mapped.cids.tolist():
        rec = tables.records[c]
        lines.append(f"node,{c},,{len(rec.members)},{rec.tau:.6g},{rec.label},")
    for (ci, cj), w in zip(mapped.edge_cids.tolist(), mapped.edge_weights.tolist()):
        lines.append(f"edge,{ci},{cj},,,,{w:.12g}")
    Path(path).write_text("\n".join(lines) + "\n")


_SEC_MAPPED = b"MGRF"
_SEC_TABLES = b"MTBL"


def _pack_record(cid: int, rec: CommunityRecord) -> bytes:
    head = struct.pack("<qdq", cid, rec.tau, rec.label)
    parts = [head]
    for arr in (rec.members, rec.labeled, rec.centroid, rec.basis, rec.explained,
                rec.distances, rec.retained):
        parts.append(serialize.pack_array(np.ascontiguousarray(arr)))
    return b"".join(parts)


def _unpack_record(payload: bytes, offset: int) -> tuple[int, CommunityRecord, int]:
    cid, tau, label = struct.unpack("<qdq", payload[offset : offset + 24])
    offset += 24
    arrays = []
    for _ in range(7):
        arr, offset = serialize.unpack_array(payload, offset)
        arrays.append(arr)
    members, labeled, centroid, basis, explained, distances, retained = arrays
    rec = CommunityRecord(members=members, labeled=labeled, centroid=centroid,
                          basis=basis, explained=explained, distances=distances,
                          tau=tau, retained=retained, label=int(label))
    return int(cid), rec, offset


def mapping_sections(mapped: MappedGraph, tables: MappingTables) -> list[tuple[bytes, bytes]]:
    mg = b"".join(
        serialize.pack_array(a)
        for a in (mapped.cids, mapped.features, mapped.labels,
                  mapped.edge_cids, mapped.edge_weights)
    )
    cfg = tables.config
    cfg_blob = serialize.pack_json({
        "variance_ratio": cfg.variance_ratio,
        "smoothing_scale": cfg.smoothing_scale,
        "smoothing_shift": cfg.smoothing_shift,
        "edge_threshold": cfg.edge_threshold,
        "invert_edge_weight": cfg.invert_edge_weight,
    })
    tb = [struct.pack("<Q", len(cfg_blob)), cfg_blob]
    memb = np.asarray(sorted(tables.membership.items()), dtype=np.int64).reshape(-1, 2)
    tb.append(serialize.pack_array(memb))
    tb.append(struct.pack("<Q", len(tables.records)))
    for cid in sorted(tables.records):
        tb.append(_pack_record(cid, tables.records[cid]))
    vols = np.asarray([[c, tables.volumes[c]] for c in sorted(tables.volumes)],
                      dtype=np.float64).reshape(-1, 2)
    tb.append(serialize.pack_array(vols))
    tb.append(struct.pack("<Q", len(tables.cross_edges)))
    for (ci, cj) in sorted(tables.cross_edges):
        tb.append(struct.pack("<qq", ci, cj))
        tb.append(serialize.pack_array(tables.cross_edges[(ci, cj)]))
    return [(_SEC_MAPPED, mg), (_SEC_TABLES, b"".join(tb))]


def mapping_from_sections(sections: dict[bytes, bytes], path="<buffer>"):
    payload = serialize.require_section(sections, _SEC_MAPPED, path)
    arrays, off = [], 0
    for _ in range(5):
        arr, off = serialize.unpack_array(payload, off)
        arrays.append(arr)
    mapped = MappedGraph(cids=arrays[0], features=arrays[1], labels=arrays[2],
                         edge_cids=arrays[3], edge_weights=arrays[4])

    payload = serialize.require_section(sections, _SEC_TABLES, path)
    (json_len,) = struct.unpack("<Q", payload[:8])
    cfg_raw = serialize.unpack_json(payload[8 : 8 + json_len])
    cfg = MapConfig(**cfg_raw)
    off = 8 + json_len
    memb, off = serialize.unpack_array(payload, off)
    membership = {int(u): int(c) for u, c in memb.tolist()}
    (n_records,) = struct.unpack("<Q", payload[off : off + 8])
    off += 8
    records = {}
    for _ in range(n_records):
        cid, rec, off = _unpack_record(payload, off)
        records[cid] = rec
    vols, off = serialize.unpack_array(payload, off)
    volumes = {int(c): float(v) for c, v in vols.tolist()}
    (n_pairs,) = struct.unpack("<Q", payload[off : off + 8])
    off += 8
    cross = {}
    for _ in range(n_pairs):
        ci, cj = struct.unpack("<qq", payload[off : off + 16])
        arr, off = serialize.unpack_array(payload, off + 16)
        cross[(int(ci), int(cj))] = arr
    tables = MappingTables(membership=membership, records=records, cross_edges=cross,
                           volumes=volumes, config=cfg)
    return mapped, tables


def save_mapping(mapped: MappedGraph, tables: MappingTables, path: str | Path) -> None:
    serialize.write_container(path, mapping_sections(mapped, tables))


def load_mapping(path: str | Path):
    return mapping_from_sections(serialize.read_container(path), path)


def copy_tables(tables: MappingTables) -> MappingTables:
    """Independent copy safe to mutate during unlearning."""
    return MappingTables(
        membership=dict(tables.membership),
        records={c: replace(r) for c, r in tables.records.items()},
        cross_edges={pair: arr.copy() for pair, arr in tables.cross_edges.items()},
        volumes=dict(tables.volumes),
        config=tables.config,
    )
