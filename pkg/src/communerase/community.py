"""Community detection: modularity-greedy initialization, significance-guided
refinement, conductance scoring, and a balanced k-means ablation partitioner.

The refinement stage re-splits poorly separated communities and re-homes
boundary nodes until every multi-node community is statistically significant
under a binomial connection null, or is flagged unresolvable.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.special import gammaln

from .errors import ParameterError
from .graph import Graph, induced_subgraph

_EPS = 1e-12


@dataclass(frozen=True)
class CommunityStats:
    internal_edges: int    # unweighted count of edges inside the community
    internal_weight: float
    possible_pairs: int    # |C|*(|C|-1)/2
    volume: float          # sum of weighted degrees


@dataclass(frozen=True)
class CommunityPartition:
    """Assignment of every node to exactly one community."""

    assignment: dict[int, int]
    communities: dict[int, np.ndarray]   # cid -> sorted member ids
    stats: dict[int, CommunityStats]
    unresolvable: frozenset[int] = field(default_factory=frozenset)

    @property
    def community_count(self) -> int:
        return len(self.communities)

    def community_of(self, node_id: int) -> int:
        return self.assignment[node_id]

    @classmethod
    def from_assignment(cls, g: Graph, assignment: dict[int, int],
                        unresolvable=frozenset()) -> "CommunityPartition":
        if set(assignment) != set(g.ids.tolist()):
            raise ParameterError("assignment must cover exactly the graph's nodes")
        members: dict[int, list[int]] = {}
        for v in g.ids.tolist():
            members.setdefault(assignment[v], []).append(v)
        communities = {c: np.asarray(sorted(vs), dtype=np.int64) for c, vs in members.items()}
        t_count = {c: 0 for c in communities}
        w_in = {c: 0.0 for c in communities}
        for (u, v), w in zip(g.edges.tolist(), g.weights.tolist()):
            cu, cv = assignment[u], assignment[v]
            if cu == cv:
                t_count[cu] += 1
                w_in[cu] += w
        stats = {}
        for c, vs in communities.items():
            size = len(vs)
            vol = float(sum(g.degree_of(int(v)) for v in vs.tolist()))
            stats[c] = CommunityStats(
                internal_edges=t_count[c],
                internal_weight=w_in[c],
                possible_pairs=size * (size - 1) // 2,
                volume=vol,
            )
        return cls(assignment=dict(assignment), communities=communities, stats=stats,
                   unresolvable=frozenset(unresolvable))

    def relabeled(self) -> "CommunityPartition":
        """Canonical community ids: sorted by smallest member id."""
        order = sorted(self.communities, key=lambda c: int(self.communities[c][0]))
        remap = {old: new for new, old in enumerate(order)}
        return CommunityPartition(
            assignment={v: remap[c] for v, c in self.assignment.items()},
            communities={remap[c]: ids for c, ids in self.communities.items()},
            stats={remap[c]: s for c, s in self.stats.items()},
            unresolvable=frozenset(remap[c] for c in self.unresolvable),
        )


def restrict_partition(g_after: Graph, p: CommunityPartition) -> CommunityPartition:
    """Partition induced on a graph with nodes removed (empty communities drop)."""
    keep = set(g_after.ids.tolist())
    assignment = {v: c for v, c in p.assignment.items() if v in keep}
    return CommunityPartition.from_assignment(g_after, assignment,
                                              unresolvable=p.unresolvable)


# -- quality scores ------------------------------------------------------------


def modularity(g: Graph, p: CommunityPartition) -> float:
    """Newman modularity of a partition, in [-1, 1]."""
    m = g.total_edge_weight
    if m <= 0:
        raise ParameterError("empty graph has undefined modularity")
    q = 0.0
    for c in sorted(p.communities):
        s = p.stats[c]
        q += s.internal_weight / m - (s.volume / (2.0 * m)) ** 2
    return q


def significance(g: Graph, community, null_p: float) -> float:
    """Binomial tail probability of the community's internal edge count.

    Returns P[Binom(T_C, null_p) >= t_C] where T_C is the number of member
    pairs and t_C the observed internal edges. Size-1 communities score 1.0.
    """
    if not (0.0 < null_p < 1.0):
        raise ParameterError(f"null_p must be in (0,1), got {null_p}")
    members = sorted(int(v) for v in community)
    if not members:
        raise ParameterError("empty community")
    size = len(members)
    if size == 1:
        return 1.0
    mset = set(members)
    t = 0
    for v in members:
        nbrs = g.neighbors(v)
        t += int(sum(1 for u in nbrs.tolist() if u in mset and u > v))
    return binomial_tail(size * (size - 1) // 2, t, null_p)


def binomial_tail(total: int, threshold: int, p: float) -> float:
    """P[Binom(total, p) >= threshold] via a log-space term sum."""
    if threshold <= 0:
        return 1.0
    if threshold > total:
        return 0.0
    ts = np.arange(threshold, total + 1, dtype=np.float64)
    logs = (
        gammaln(total + 1.0)
        - gammaln(ts + 1.0)
        - gammaln(total - ts + 1.0)
        + ts * np.log(p)
        + (total - ts) * np.log1p(-p)
    )
    peak = logs.max()
    return float(min(1.0, np.exp(peak) * np.exp(logs - peak).sum()))


def global_density(g: Graph) -> float:
    """Default connection null: observed edge density 2m / (n(n-1))."""
    n = g.node_count
    if n < 2:
        return 0.5
    dens = 2.0 * g.edge_count / (n * (n - 1))
    return min(max(dens, 1e-12), 1.0 - 1e-12)


def conductance(g: Graph, community) -> float:
    """Cut weight over the smaller side's volume; 0.0 when nothing is cut."""
    members = set(int(v) for v in community)
    if not members:
        raise ParameterError("empty community")
    for v in members:
        if not g.has_node(v):
            raise ParameterError(f"unknown node id {v}")
    vol = 0.0
    cut = 0.0
    for v in sorted(members):
        nbrs = g.neighbors(v)
        wts = g.neighbor_weights(v)
        vol += float(wts.sum())
        outside = np.array([u not in members for u in nbrs.tolist()], dtype=bool)
        if outside.any():
            cut += float(wts[outside].sum())
    if cut == 0.0:
        return 0.0
    total = 2.0 * g.total_edge_weight
    return cut / min(vol, total - vol)


# -- Louvain -------------------------------------------------------------------


class _LevelGraph:
    """Weighted graph with self-loops used by the aggregation hierarchy."""

    __slots__ = ("adj", "self_w", "deg", "total")

    def __init__(self, adj: list[dict[int, float]], self_w: list[float]):
        self.adj = adj
        self.self_w = self_w
        self.deg = [sum(nbrs.values()) + 2.0 * self_w[i] for i, nbrs in enumerate(adj)]
        self.total = sum(self.deg) / 2.0


def _local_moves(lg: _LevelGraph, rng: np.random.Generator) -> list[int]:
    n = len(lg.adj)
    comm = list(range(n))
    tot = list(lg.deg)
    m = lg.total
    improved = True
    while improved:
        improved = False
        for i in rng.permutation(n).tolist():
            ci = comm[i]
            w2c: dict[int, float] = {}
            for j, w in lg.adj[i].items():
                cj = comm[j]
                w2c[cj] = w2c.get(cj, 0.0) + w
            tot[ci] -= lg.deg[i]
            # Baseline is staying put; ascending candidate order makes the
            # lowest community id win among equal gains.
            best_c, best_gain = ci, w2c.get(ci, 0.0) / m - tot[ci] * lg.deg[i] / (2.0 * m * m)
            for c in sorted(w2c):
                if c == ci:
                    continue
                gain = w2c[c] / m - tot[c] * lg.deg[i] / (2.0 * m * m)
                if gain > best_gain + _EPS:
                    best_c, best_gain = c, gain
            if best_c != ci:
                comm[i] = best_c
                tot[best_c] += lg.deg[i]
                improved = True
            else:
                tot[ci] += lg.deg[i]
    return comm


def _aggregate(lg: _LevelGraph, comm: list[int]) -> tuple[_LevelGraph, dict[int, int]]:
    labels = sorted(set(comm))
    remap = {c: i for i, c in enumerate(labels)}
    k = len(labels)
    adj: list[dict[int, float]] = [dict() for _ in range(k)]
    self_w = [0.0] * k
    for i, nbrs in enumerate(lg.adj):
        ci = remap[comm[i]]
        self_w[ci] += lg.self_w[i]
        for j, w in nbrs.items():
            if j < i:
                continue
            cj = remap[comm[j]]
            if ci == cj:
                self_w[ci] += w
            else:
                adj[ci][cj] = adj[ci].get(cj, 0.0) + w
                adj[cj][ci] = adj[cj].get(ci, 0.0) + w
    for nbrs in adj:
        for key in sorted(nbrs):
            nbrs[key] = nbrs.pop(key)
    return _LevelGraph(adj, self_w), remap


def louvain(g: Graph, seed: int, max_passes: int = 20) -> CommunityPartition:
    """Greedy modularity optimization from a singleton start.

    Node visit order is shuffled by the seed; all moves are strictly
    modularity-increasing, so the result never scores below the singleton
    partition. An edgeless graph yields singletons with a warning.
    """
    ids = g.ids.tolist()
    if g.edge_count == 0:
        warnings.warn("louvain on an edgeless graph returns the singleton partition")
        return CommunityPartition.from_assignment(g, {v: i for i, v in enumerate(ids)})
    adj: list[dict[int, float]] = [dict() for _ in range(g.node_count)]
    rows = {v: i for i, v in enumerate(ids)}
    for (u, v), w in zip(g.edges.tolist(), g.weights.tolist()):
        ru, rv = rows[u], rows[v]
        adj[ru][rv] = adj[ru].get(rv, 0.0) + w
        adj[rv][ru] = adj[rv].get(ru, 0.0) + w
    lg = _LevelGraph(adj, [0.0] * g.node_count)
    node_comm = list(range(g.node_count))  # original row -> current level community
    for level in range(max(1, max_passes)):
        rng = np.random.default_rng([seed & 0x7FFFFFFF, level])
        comm = _local_moves(lg, rng)
        if len(set(comm)) == len(lg.adj):
            break
        lg, remap = _aggregate(lg, comm)
        node_comm = [remap[comm[c]] for c in node_comm]
        if len(lg.adj) == 1:
            break
    assignment = {ids[i]: node_comm[i] for i in range(g.node_count)}
    return CommunityPartition.from_assignment(g, assignment).relabeled()


# -- significance-guided refinement ---------------------------------------------


class _RefineState:
    """Mutable partition bookkeeping with cached significance values."""

    def __init__(self, g: Graph, null_p: float):
        self.g = g
        self.null_p = null_p
        self.members: dict[int, set[int]] = {}
        self.node2c: dict[int, int] = {}
        self.t: dict[int, int] = {}
        self._pcache: dict[tuple[int, int], float] = {}

    def add_community(self, cid: int, nodes) -> None:
        nset = set(int(v) for v in nodes)
        self.members[cid] = nset
        for v in nset:
            self.node2c[v] = cid
        t = 0
        for v in nset:
            for u in self.g.neighbors(v).tolist():
                if u in nset and u > v:
                    t += 1
        self.t[cid] = t

    def drop_community(self, cid: int) -> None:
        del self.members[cid], self.t[cid]

    def pvalue(self, size: int, t: int) -> float:
        if size <= 1:
            return 1.0
        key = (size, t)
        if key not in self._pcache:
            self._pcache[key] = binomial_tail(size * (size - 1) // 2, t, self.null_p)
        return self._pcache[key]

    def p_of(self, cid: int) -> float:
        return self.pvalue(len(self.members[cid]), self.t[cid])

    def edges_into(self, v: int, cid: int) -> int:
        nset = self.members[cid]
        return sum(1 for u in self.g.neighbors(v).tolist() if u in nset and u != v)

    def move(self, v: int, src: int, dst: int) -> None:
        self.t[src] -= self.edges_into(v, src)
        self.members[src].discard(v)
        self.t[dst] += self.edges_into(v, dst)
        self.members[dst].add(v)
        self.node2c[v] = dst
        if not self.members[src]:
            self.drop_community(src)


def refine(
    g: Graph,
    p: CommunityPartition,
    alpha: float = 0.05,
    conductance_quantile: float = 0.75,
    *,
    null_p: float | None = None,
    seed: int = 0,
    max_sweeps: int = 12,
    louvain_passes: int = 20,
) -> CommunityPartition:
    """Re-split and re-home nodes of weak communities.

    Communities whose conductance exceeds the given quantile, or whose
    significance p-value exceeds alpha, are re-clustered on their induced
    subgraph; boundary nodes then migrate greedily while the p-values of both
    endpoint communities do not increase and their sum strictly decreases.
    Multi-node communities still failing the alpha test are flagged
    unresolvable and kept intact.
    """
    if not (0.0 < alpha < 1.0):
        raise ParameterError(f"alpha must be in (0,1), got {alpha}")
    if not (0.0 <= conductance_quantile <= 1.0):
        raise ParameterError("conductance_quantile must be in [0,1]")
    if null_p is None:
        null_p = global_density(g)

    state = _RefineState(g, null_p)
    for cid in sorted(p.communities):
        state.add_community(cid, p.communities[cid])
    next_cid = max(state.members, default=-1) + 1

    # The quantile is frozen on the input partition; the coarse-to-fine loop
    # keeps splitting any community above it (or failing the alpha test)
    # until the pieces pass or stop splitting.
    phis = {c: conductance(g, p.communities[c]) for c in sorted(p.communities)}
    threshold = float(np.quantile(np.array(list(phis.values())), conductance_quantile))

    def needs_split(cid: int) -> bool:
        members = state.members[cid]
        if len(members) <= 1:
            return False
        if state.p_of(cid) > alpha:
            return True
        return conductance(g, sorted(members)) > threshold + _EPS

    selected = [c for c in sorted(state.members) if needs_split(c)]
    if not selected:
        return p

    no_split: set[int] = set()
    for round_no in range(max(1, max_sweeps)):
        queue = [c for c in sorted(state.members)
                 if c not in no_split and needs_split(c)]
        split_any = False
        while queue:
            cid = queue.pop(0)
            if cid not in state.members or len(state.members[cid]) <= 1:
                continue
            nodes = sorted(state.members[cid])
            sub = induced_subgraph(g, nodes)
            subparts = louvain(sub, seed=_derive_seed(seed, cid), max_passes=louvain_passes)
            if subparts.community_count <= 1:
                no_split.add(cid)
                continue
            split_any = True
            state.drop_community(cid)
            for sc in sorted(subparts.communities):
                new_cid = next_cid
                next_cid += 1
                state.add_community(new_cid, subparts.communities[sc])
                part = subparts.communities[sc]
                if len(part) > 1 and needs_split(new_cid):
                    queue.append(new_cid)
        moved_any = _boundary_moves(state, alpha, max_sweeps)
        if moved_any:
            # moves change memberships, so earlier no-split verdicts expire
            no_split.clear()
        if not split_any and not moved_any:
            break

    unresolvable = {
        c for c in state.members
        if len(state.members[c]) > 1 and state.p_of(c) > alpha
    }
    assignment = dict(state.node2c)
    return CommunityPartition.from_assignment(g, assignment, unresolvable).relabeled()


def _derive_seed(seed: int, salt: int) -> int:
    return int(np.random.default_rng([seed & 0x7FFFFFFF, salt]).integers(0, 2**31 - 1))


def _boundary_moves(state: _RefineState, alpha: float, max_sweeps: int) -> bool:
    moved_any = False
    for _ in range(max_sweeps):
        moved = False
        for v in sorted(state.node2c):
            src = state.node2c[v]
            neighbor_cids = sorted(
                {state.node2c[u] for u in state.g.neighbors(v).tolist()} - {src}
            )
            if not neighbor_cids:
                continue
            src_size = len(state.members[src])
            p_src = state.p_of(src)
            e_src = state.edges_into(v, src)
            p_src_after = 0.0 if src_size == 1 else state.pvalue(src_size - 1, state.t[src] - e_src)
            best = None
            for dst in neighbor_cids:
                dst_size = len(state.members[dst])
                p_dst = state.p_of(dst)
                e_dst = state.edges_into(v, dst)
                p_dst_after = state.pvalue(dst_size + 1, state.t[dst] + e_dst)
                if p_src_after > p_src + _EPS or p_dst_after > p_dst + _EPS:
                    continue
                decrease = (p_src + p_dst) - (p_src_after + p_dst_after)
                if decrease > 1e-15 and (best is None or decrease > best[0] + _EPS):
                    best = (decrease, dst)
            if best is not None:
                state.move(v, src, best[1])
                moved = True
                moved_any = True
        if not moved:
            break
    return moved_any


# -- balanced k-means ------------------------------------------------------------


def bekm(g: Graph, k: int, seed: int, max_iter: int = 30) -> CommunityPartition:
    """Balanced k-means over node features; cluster sizes differ by at most 1.

    Assignment is solved each round as a linear sum assignment of nodes to
    cluster slots (r clusters of size ceil(n/k), the rest floor(n/k)).
    """
    n = g.node_count
    if not (1 <= k <= n):
        raise ParameterError(f"k must be in [1, {n}], got {k}")
    X = g.features
    rng = np.random.default_rng(seed)
    centers = _kmeanspp(X, k, rng)
    base, extra = divmod(n, k)
    quotas = np.full(k, base, dtype=np.int64)
    quotas[:extra] += 1
    slot_cluster = np.repeat(np.arange(k), quotas)
    assign = np.full(n, -1, dtype=np.int64)
    for _ in range(max_iter):
        d2 = ((X[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        rows, cols = linear_sum_assignment(d2[:, slot_cluster])
        new_assign = np.empty(n, dtype=np.int64)
        new_assign[rows] = slot_cluster[cols]
        if np.array_equal(new_assign, assign):
            break
        assign = new_assign
        for c in range(k):
            centers[c] = X[assign == c].mean(axis=0)
    assignment = {int(v): int(assign[i]) for i, v in enumerate(g.ids)}
    return CommunityPartition.from_assignment(g, assignment).relabeled()


def _kmeanspp(X: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = len(X)
    centers = np.empty((k, X.shape[1]), dtype=np.float64)
    centers[0] = X[rng.integers(n)]
    d2 = ((X - centers[0]) ** 2).sum(axis=1)
    for c in range(1, k):
        total = d2.sum()
        if total <= 0:
            centers[c] = X[rng.integers(n)]
        else:
            centers[c] = X[rng.choice(n, p=d2 / total)]
        d2 = np.minimum(d2, ((X - centers[c]) ** 2).sum(axis=1))
    return centers


# -- text export ------------------------------------------------------------------


def save_partition(p: CommunityPartition, path: str | Path) -> None:
    lines = [f"{v} {c}" for v, c in sorted(p.assignment.items())]
    Path(path).write_text("\n".join(lines) + "\n")


def load_partition(g: Graph, path: str | Path) -> CommunityPartition:
    assignment = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != 2:
            raise ParameterError(f"{path}:{lineno}: expected 'node_id community_id'")
        assignment[int(parts[0])] = int(parts[1])
    return CommunityPartition.from_assignment(g, assignment)
