"""Node-deletion servicing on the mapped graph.

A deletion batch touches only the communities of the victims: their mapped
nodes are recomputed from the surviving members, and the incident mapped
edges get fresh tallies, volumes, and weights. Victims outside their
community's retained set are filtered: they contributed nothing to the
mapped node, so by default their removal skips the feature/label
recomputation entirely (and, with no cross edges, leaves the mapped graph
bit-identical). Strict mode disables the filter and recomputes everything a
victim could have influenced, which makes unlearning exactly equivalent to
rebuilding the mapping from scratch on the survivor graph.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, replace

import numpy as np

from .errors import ParameterError
from .graph import Graph, remove_nodes
from .mapping import (
    MappedGraph,
    MappingTables,
    assemble_mapped_graph,
    community_volume,
    copy_tables,
    mapped_edge_weight,
    rebuild_community,
)

PRINCIPAL = "principal"
FILTERED = "filtered"


@dataclass(frozen=True)
class UnlearnRequest:
    victims: tuple[int, ...]
    strict_feature_update: bool = False

    def __post_init__(self):
        if len(set(self.victims)) != len(self.victims):
            raise ParameterError("duplicate victim ids in request")


@dataclass(frozen=True)
class InfluenceSet:
    """Everything a deletion batch can change in the mapped graph."""

    verdicts: dict[int, str]                  # victim -> principal | filtered
    communities: tuple[int, ...]              # communities containing victims
    affected_nodes: tuple[int, ...]           # mapped nodes to recompute
    edge_touched: tuple[int, ...]             # communities whose incident pairs refresh
    affected_pairs: tuple[tuple[int, int], ...]

    @property
    def empty(self) -> bool:
        return not self.affected_nodes and not self.affected_pairs


def _victim_cross_info(tables: MappingTables, victims: set[int]):
    """Victims with cross-community edges, and the communities they reach."""
    cross_victims: set[int] = set()
    adjacent: set[int] = set()
    victim_communities = {tables.membership[v] for v in victims}
    for (ci, cj), rows in tables.cross_edges.items():
        if ci not in victim_communities and cj not in victim_communities:
            continue
        for u, v, _ in rows.tolist():
            u, v = int(u), int(v)
            if u in victims:
                cross_victims.add(u)
                adjacent.add(cj if tables.membership[u] == ci else ci)
            if v in victims:
                cross_victims.add(v)
                adjacent.add(cj if tables.membership[v] == ci else ci)
    return cross_victims, adjacent


def influence(tables: MappingTables, req: UnlearnRequest) -> InfluenceSet:
    """Classify victims and enumerate the mapped entities they affect."""
    missing = [v for v in req.victims if v not in tables.membership]
    if missing:
        raise ParameterError(f"victims not in the mapped training graph: {sorted(missing)}")
    victims = set(req.victims)
    verdicts: dict[int, str] = {}
    for v in req.victims:
        cid = tables.membership[v]
        retained = tables.records[cid].retained
        principal = req.strict_feature_update or bool(np.isin(v, retained).item())
        verdicts[v] = PRINCIPAL if principal else FILTERED
    communities = sorted({tables.membership[v] for v in req.victims})
    affected_nodes = sorted({
        tables.membership[v] for v in req.victims if verdicts[v] == PRINCIPAL
    })
    cross_victims, adjacent = _victim_cross_info(tables, victims)
    if req.strict_feature_update:
        edge_touched = sorted(set(communities) | adjacent)
    else:
        edge_touched = sorted(
            {tables.membership[v] for v in req.victims
             if verdicts[v] == PRINCIPAL or v in cross_victims}
        )
    affected_pairs = tuple(tables.pairs_incident_to(edge_touched))
    return InfluenceSet(
        verdicts=verdicts,
        communities=tuple(communities),
        affected_nodes=tuple(affected_nodes),
        edge_touched=tuple(edge_touched),
        affected_pairs=affected_pairs,
    )


def _scrub_record(rec, victims: set[int]):
    keep = ~np.isin(rec.members, sorted(victims))
    if keep.all():
        return rec
    return replace(
        rec,
        members=rec.members[keep],
        distances=rec.distances[keep],
        labeled=rec.labeled[~np.isin(rec.labeled, sorted(victims))],
        retained=rec.retained[~np.isin(rec.retained, sorted(victims))],
    )


def unlearn(
    g: Graph,
    mapped: MappedGraph,
    tables: MappingTables,
    req: UnlearnRequest,
    on_missing: str = "error",
) -> tuple[MappedGraph, MappingTables, Graph]:
    """Remove the victims and locally update the mapped graph.

    Everything outside the influence set keeps its exact bit pattern. A
    community emptied of members loses its mapped node and incident edges.
    ``on_missing="skip"`` drops already-unlearned ids instead of raising,
    which makes repeated requests no-ops.
    """
    if on_missing not in ("error", "skip"):
        raise ParameterError("on_missing must be 'error' or 'skip'")
    victims = list(req.victims)
    if on_missing == "skip":
        victims = [v for v in victims if v in tables.membership]
        req = UnlearnRequest(tuple(victims), req.strict_feature_update)
        if not victims:
            return mapped, tables, g
    infl = influence(tables, req)
    victim_set = set(victims)

    new_tables = copy_tables(tables)
    g_after = remove_nodes(g, victims)

    # scrub all victims from provenance
    for v in victims:
        del new_tables.membership[v]
    touched_records = sorted({tables.membership[v] for v in victims})
    for cid in touched_records:
        new_tables.records[cid] = _scrub_record(new_tables.records[cid], victim_set)
    for pair in infl.affected_pairs:
        rows = new_tables.cross_edges[pair]
        if len(rows):
            keep = ~(
                np.isin(rows[:, 0].astype(np.int64), victims)
                | np.isin(rows[:, 1].astype(np.int64), victims)
            )
            if not keep.all():
                new_tables.cross_edges[pair] = rows[keep]

    # recompute the affected mapped nodes from the surviving members
    deleted: set[int] = set()
    for cid in infl.affected_nodes:
        members = new_tables.records[cid].members
        if len(members) == 0:
            deleted.add(cid)
            del new_tables.records[cid]
            del new_tables.volumes[cid]
            continue
        new_tables.records[cid] = rebuild_community(new_tables, g, cid)

    # drop pairs that lost an endpoint or all their edges
    for pair in infl.affected_pairs:
        if pair[0] in deleted or pair[1] in deleted or len(new_tables.cross_edges[pair]) == 0:
            del new_tables.cross_edges[pair]

    # refresh volumes wherever a recomputed pair will read them
    refresh = set(infl.edge_touched) - deleted
    for pair in infl.affected_pairs:
        for cid in pair:
            if cid not in deleted:
                refresh.add(cid)
    for cid in sorted(refresh):
        new_tables.volumes[cid] = community_volume(g_after, new_tables.records[cid].members)

    new_mapped = _reassemble(mapped, new_tables, infl, deleted)
    if new_mapped.node_count == 0:
        warnings.warn("unlearning emptied every community; the mapped graph is empty")
    return new_mapped, new_tables, g_after


def _reassemble(old: MappedGraph, tables: MappingTables, infl: InfluenceSet,
                deleted: set[int]) -> MappedGraph:
    """Rebuild the mapped graph, touching only the influence set.

    Untouched mapped nodes and edges are copied verbatim from the old arrays
    (exact bit identity by construction); affected nodes come from the
    recomputed records and affected pairs get fresh weights and a fresh
    threshold decision.
    """
    if old.node_count == 0:
        return assemble_mapped_graph(tables)
    node_affected = set(infl.affected_nodes)
    old_index = {int(c): i for i, c in enumerate(old.cids)}
    cids = np.asarray(sorted(tables.records), dtype=np.int64)
    features = np.empty((len(cids), old.features.shape[1]))
    labels = np.empty(len(cids), dtype=np.int64)
    for i, cid in enumerate(cids.tolist()):
        if cid in node_affected or cid not in old_index:
            features[i] = tables.records[cid].centroid
            labels[i] = tables.records[cid].label
        else:
            features[i] = old.features[old_index[cid]]
            labels[i] = old.labels[old_index[cid]]
    pair_affected = set(infl.affected_pairs)
    old_pairs = {tuple(p): w for p, w in zip(old.edge_cids.tolist(), old.edge_weights.tolist())}
    pairs, weights = [], []
    for pair in sorted(tables.cross_edges):
        if pair in pair_affected:
            w = mapped_edge_weight(tables, pair)
            if w >= tables.config.edge_threshold:
                pairs.append(pair)
                weights.append(w)
        elif pair in old_pairs:
            pairs.append(pair)
            weights.append(old_pairs[pair])
    edge_cids = (np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
                 if pairs else np.zeros((0, 2), dtype=np.int64))
    return MappedGraph(cids=cids, features=features, labels=labels,
                       edge_cids=edge_cids, edge_weights=np.asarray(weights, dtype=np.float64))


def verify_unlearned(tables: MappingTables, victims) -> bool:
    """True iff no victim appears in any member list, retained set, or tally."""
    victims = set(int(v) for v in victims)
    if victims & set(tables.membership):
        return False
    for rec in tables.records.values():
        for arr in (rec.members, rec.labeled, rec.retained):
            if victims & set(arr.tolist()):
                return False
    for rows in tables.cross_edges.values():
        for u, v, _ in rows.tolist():
            if int(u) in victims or int(v) in victims:
                return False
    return True
