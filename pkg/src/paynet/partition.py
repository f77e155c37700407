"""Community and hierarchy inference: directed modularity with Louvain moves,
agony-minimizing ordered partitions, and per-group risk enrichment."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .graph import PaymentGraph, components
from .riskstats import RISK_CLASSES, EnrichmentResult, hypergeom_test


class PartitionError(ValueError):
    pass


@dataclass(frozen=True)
class RankedPartition:
    """node -> group map; ordered partitions carry rank semantics (1 = lowest)."""

    assignment: np.ndarray  # group ids 1..n_groups
    ordered: bool
    n_groups: int
    score: float  # modularity Q, or hierarchy h for ordered partitions
    method: str = ""
    agony: float | None = None


def _relabel(assignment: np.ndarray) -> tuple[np.ndarray, int]:
    """Contiguous ids 1..M in order of first appearance."""
    _, first = np.unique(assignment, return_index=True)
    order = assignment[np.sort(first)]
    remap = {int(g): i + 1 for i, g in enumerate(order)}
    return np.array([remap[int(g)] for g in assignment], dtype=np.int64), len(order)


# -- modularity -----------------------------------------------------------------


def modularity(graph: PaymentGraph, assignment: Sequence[int], weighted: bool = False) -> float:
    """Directed modularity Q = (1/m) sum_C (W_C - Sout_C * Sin_C / m).

    Uses the 1/m directed convention, so the one-group partition scores 0.
    """
    comm = np.asarray(assignment, dtype=np.int64)
    if comm.shape != (graph.n,):
        raise PartitionError("every node needs a group")
    if graph.m == 0:
        raise PartitionError("modularity of edgeless graph")
    w = graph.weight if weighted else np.ones(graph.m)
    m = w.sum()
    _, codes = np.unique(comm, return_inverse=True)
    k = codes.max() + 1
    intra = np.bincount(codes[graph.src], weights=w * (codes[graph.src] == codes[graph.dst]), minlength=k)
    s_out = np.bincount(codes[graph.src], weights=w, minlength=k)
    s_in = np.bincount(codes[graph.dst], weights=w, minlength=k)
    return float((intra - s_out * s_in / m).sum() / m)


# -- Louvain ---------------------------------------------------------------------


class _Level:
    """One aggregation level: directed weighted multigraph with self-loops."""

    def __init__(self, n: int, src: np.ndarray, dst: np.ndarray, w: np.ndarray):
        self.n = n
        self.src, self.dst, self.w = src, dst, w
        self.m = float(w.sum())
        self.kout = np.bincount(src, weights=w, minlength=n)
        self.kin = np.bincount(dst, weights=w, minlength=n)
        self.adj: list[list[tuple[int, float]]] = [[] for _ in range(n)]
        for s, d, wt in zip(src, dst, w):
            if s != d:
                self.adj[s].append((int(d), float(wt)))
                self.adj[d].append((int(s), float(wt)))


def _louvain_level(level: _Level, rng: np.random.Generator,
                   init: np.ndarray | None = None) -> np.ndarray | None:
    """Local-move phase; returns community labels or None if nothing moved."""
    n, m = level.n, level.m
    comm = np.arange(n, dtype=np.int64) if init is None else init.astype(np.int64).copy()
    s_out = np.bincount(comm, weights=level.kout, minlength=n)
    s_in = np.bincount(comm, weights=level.kin, minlength=n)
    size = np.bincount(comm, minlength=n)

    def best_community(u: int) -> tuple[int, float]:
        links: dict[int, float] = {}
        for v, wt in level.adj[u]:
            links[int(comm[v])] = links.get(int(comm[v]), 0.0) + wt
        old = int(comm[u])
        s_out[old] -= level.kout[u]
        s_in[old] -= level.kin[u]
        size[old] -= 1
        best_c, best_gain = old, links.get(old, 0.0) - (
            level.kout[u] * s_in[old] + level.kin[u] * s_out[old]) / m
        for c, wt in links.items():
            if c == old:
                continue
            gain = wt - (level.kout[u] * s_in[c] + level.kin[u] * s_out[c]) / m
            if gain > best_gain + 1e-12:
                best_c, best_gain = c, gain
        return best_c, best_gain

    def commit(u: int, c: int) -> None:
        comm[u] = c
        s_out[c] += level.kout[u]
        s_in[c] += level.kin[u]
        size[c] += 1

    moved_any = False
    improved = True
    while improved:
        improved = False
        for u in rng.permutation(n):
            u = int(u)
            old = int(comm[u])
            best_c, _ = best_community(u)
            commit(u, best_c)
            if best_c != old:
                improved = moved_any = True
    # zero-gain consolidation: absorb singleton communities when harmless
    for u in rng.permutation(n):
        u = int(u)
        old = int(comm[u])
        if size[old] != 1:
            continue
        links: dict[int, float] = {}
        for v, wt in level.adj[u]:
            links[int(comm[v])] = links.get(int(comm[v]), 0.0) + wt
        s_out[old] -= level.kout[u]
        s_in[old] -= level.kin[u]
        size[old] -= 1
        best_c, best_gain = old, links.get(old, 0.0) - (
            level.kout[u] * s_in[old] + level.kin[u] * s_out[old]) / m
        for c, wt in links.items():
            if c == old or size[c] == 0:
                continue
            gain = wt - (level.kout[u] * s_in[c] + level.kin[u] * s_out[c]) / m
            if gain > best_gain - 1e-12:
                best_c, best_gain = c, gain
        commit(u, best_c)
        if best_c != old:
            moved_any = True
    return comm if moved_any else None


def louvain(graph: PaymentGraph, seed: int = 0, weighted: bool = False,
            max_levels: int = 30) -> RankedPartition:
    """Directed-modularity Louvain: seeded sweep order, deterministic given seed.

    At the local optimum no single-node move increases Q; levels aggregate
    until no further improvement.
    """
    if graph.m < 1:
        raise PartitionError("louvain needs at least one edge")
    rng = np.random.default_rng(seed)
    w0 = graph.weight if weighted else np.ones(graph.m)
    base = _Level(graph.n, graph.src.astype(np.int64), graph.dst.astype(np.int64),
                  w0.astype(np.float64))

    def aggregate(level: _Level, codes: np.ndarray, k: int) -> _Level:
        key = codes[level.src] * k + codes[level.dst]
        uniq, inv = np.unique(key, return_inverse=True)
        agg = np.zeros(len(uniq))
        np.add.at(agg, inv, level.w)
        return _Level(k, (uniq // k).astype(np.int64), (uniq % k).astype(np.int64), agg)

    mapping = np.arange(graph.n, dtype=np.int64)
    for _ in range(max_levels):
        # node-level pass: the first round is the standard singleton start, later
        # rounds refine the composed assignment so that no single original-node
        # move can improve Q at convergence
        comm = _louvain_level(base, rng, init=mapping)
        refined = comm is not None
        if refined:
            labels, _ = _relabel(comm + 1)
            mapping = labels - 1
        level = aggregate(base, mapping, int(mapping.max()) + 1)
        agg_map = np.arange(level.n, dtype=np.int64)
        agg_moved = False
        for _ in range(max_levels):
            comm = _louvain_level(level, rng)
            if comm is None:
                break
            labels, k = _relabel(comm + 1)
            codes = labels - 1
            agg_map = codes[agg_map]
            level = aggregate(level, codes, k)
            agg_moved = True
        if agg_moved:
            mapping = agg_map[mapping]
        if not agg_moved and not refined:
            break
    assignment, n_groups = _relabel(mapping + 1)
    q = modularity(graph, assignment, weighted=weighted)
    return RankedPartition(assignment, ordered=False, n_groups=n_groups, score=q, method="louvain")


# -- agony ----------------------------------------------------------------------


def agony(graph: PaymentGraph, ranks: Sequence[int]) -> float:
    """Total penalty sum f(r(u)-r(v)) over edges, f(x) = x+1 for x >= 0 else 0.

    Edges count once per aggregated edge (unweighted).
    """
    r = np.asarray(ranks, dtype=np.int64)
    if r.shape != (graph.n,):
        raise PartitionError("every node needs a rank")
    diff = r[graph.src] - r[graph.dst] + 1
    return float(np.maximum(diff, 0).sum())


def _agony_exact_small(graph: PaymentGraph) -> tuple[np.ndarray, float]:
    """Optimal ranking by DP over chains of prefix sets (nodes with rank <= l).

    The agony of a ranking equals sum over levels l of #{edges (u,v): v in
    T_l, u not in T_{l-1}} where T_l is the prefix set at level l, so the
    minimum over rankings is a shortest chain from the empty set to V.
    """
    n = graph.n
    if n > 9:
        raise PartitionError("exact_small supports n <= 9")
    src_bits = (1 << graph.src.astype(np.int64)).astype(np.int64)
    dst_bits = (1 << graph.dst.astype(np.int64)).astype(np.int64)
    full = (1 << n) - 1
    dp = np.full(full + 1, np.inf)
    parent = np.zeros(full + 1, dtype=np.int64)
    dp[0] = 0.0
    for t in range(1, full + 1):
        s = (t - 1) & t
        while True:
            if np.isfinite(dp[s]):
                cut = int(np.count_nonzero(((dst_bits & t) != 0) & ((src_bits & s) == 0)))
                cand = dp[s] + cut
                if cand < dp[t]:
                    dp[t] = cand
                    parent[t] = s
            if s == 0:
                break
            s = (s - 1) & t
    ranks = np.zeros(n, dtype=np.int64)
    t = full
    chain = []
    while t:
        chain.append(t)
        t = int(parent[t])
    for lvl, t in enumerate(reversed(chain), start=1):
        prev = int(parent[t])
        new = t & ~prev
        for u in range(n):
            if new >> u & 1:
                ranks[u] = lvl
    return ranks, float(dp[full])


def _longest_path_layers(n: int, src: np.ndarray, dst: np.ndarray,
                         height: np.ndarray | None = None) -> np.ndarray:
    """Longest-path layer per node of a DAG; `height` spreads multi-level nodes."""
    h = np.ones(n, dtype=np.int64) if height is None else height
    indeg = np.bincount(dst, minlength=n)
    layer = np.zeros(n, dtype=np.int64)
    out: list[list[int]] = [[] for _ in range(n)]
    for s, d in zip(src, dst):
        out[s].append(int(d))
    queue = [u for u in range(n) if indeg[u] == 0]
    seen = 0
    while queue:
        u = queue.pop()
        seen += 1
        for v in out[u]:
            layer[v] = max(layer[v], layer[u] + h[u])
            indeg[v] -= 1
            if indeg[v] == 0:
                queue.append(v)
    if seen != n:
        raise PartitionError("layering requires a DAG")
    return layer


def _greedy_linear_order(n_sub: int, src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    """Eades-Lin-Smyth feedback-arc ordering: peel sinks/sources, else the node
    maximizing outdeg - indeg. Returns position per node (few backward edges)."""
    import heapq

    out_adj: list[list[int]] = [[] for _ in range(n_sub)]
    in_adj: list[list[int]] = [[] for _ in range(n_sub)]
    outdeg = np.zeros(n_sub, dtype=np.int64)
    indeg = np.zeros(n_sub, dtype=np.int64)
    for s, d in zip(src, dst):
        out_adj[s].append(int(d))
        in_adj[d].append(int(s))
        outdeg[s] += 1
        indeg[d] += 1
    removed = np.zeros(n_sub, dtype=bool)
    left: list[int] = []
    right: list[int] = []
    heap = [(-(outdeg[u] - indeg[u]), u) for u in range(n_sub)]
    heapq.heapify(heap)
    sinks = [u for u in range(n_sub) if outdeg[u] == 0]
    sources = [u for u in range(n_sub) if indeg[u] == 0 and outdeg[u] > 0]

    def drop(u: int) -> None:
        removed[u] = True
        for v in out_adj[u]:
            if not removed[v]:
                indeg[v] -= 1
                if indeg[v] == 0 and outdeg[v] > 0:
                    sources.append(v)
                heapq.heappush(heap, (-(outdeg[v] - indeg[v]), v))
        for v in in_adj[u]:
            if not removed[v]:
                outdeg[v] -= 1
                if outdeg[v] == 0:
                    sinks.append(v)
                heapq.heappush(heap, (-(outdeg[v] - indeg[v]), v))

    n_left = 0
    while n_left < n_sub:
        moved = False
        while sinks:
            u = sinks.pop()
            if not removed[u] and outdeg[u] == 0:
                right.append(u)
                drop(u)
                n_left += 1
                moved = True
        while sources:
            u = sources.pop()
            if not removed[u] and indeg[u] == 0:
                left.append(u)
                drop(u)
                n_left += 1
                moved = True
        if moved or n_left >= n_sub:
            continue
        while heap:
            key, u = heapq.heappop(heap)
            if not removed[u] and key == -(outdeg[u] - indeg[u]):
                left.append(u)
                drop(u)
                n_left += 1
                break
    order = left + right[::-1]
    pos = np.empty(n_sub, dtype=np.int64)
    pos[order] = np.arange(n_sub)
    return pos


def _scc_internal_layers(graph: PaymentGraph, scc: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Sub-layer per node inside its SCC (0-based) plus each SCC's height.

    Singleton components get height 1. Larger components are ordered by a
    feedback-arc heuristic; edges consistent with the order form a DAG whose
    longest-path layers become the sub-levels."""
    n_comp = int(scc.max()) + 1
    sizes = np.bincount(scc, minlength=n_comp)
    sub = np.zeros(graph.n, dtype=np.int64)
    height = np.ones(n_comp, dtype=np.int64)
    intra = scc[graph.src] == scc[graph.dst]
    for c in np.flatnonzero(sizes > 1):
        members = np.flatnonzero(scc == c)
        local = np.full(graph.n, -1, dtype=np.int64)
        local[members] = np.arange(len(members))
        sel = intra & (scc[graph.src] == c)
        ls, ld = local[graph.src[sel]], local[graph.dst[sel]]
        pos = _greedy_linear_order(len(members), ls, ld)
        keep = pos[ls] < pos[ld]
        layers = _longest_path_layers(len(members), ls[keep], ld[keep])
        sub[members] = layers
        height[c] = int(layers.max()) + 1
    return sub, height


def _local_moves(graph: PaymentGraph, ranks: np.ndarray, rng: np.random.Generator,
                 max_sweeps: int) -> np.ndarray:
    src, dst = graph.src, graph.dst
    n = graph.n

    def total(r: np.ndarray) -> float:
        return float(np.maximum(r[src] - r[dst] + 1, 0).sum())

    in_nbrs: list[np.ndarray] = [graph.in_edges(u)[0] for u in range(n)]
    out_nbrs: list[np.ndarray] = [graph.out_edges(u)[0] for u in range(n)]
    current = total(ranks)
    for _ in range(max_sweeps):
        improved = False
        # single-node rank changes (node cost is convex in its rank)
        for u in rng.permutation(n):
            u = int(u)
            r_out = ranks[out_nbrs[u]]
            r_in = ranks[in_nbrs[u]]
            mmax = int(ranks.max()) + 1
            xs = np.arange(1, mmax + 1)
            cost = (
                np.maximum(xs[:, None] - r_out[None, :] + 1, 0).sum(axis=1)
                + np.maximum(r_in[None, :] - xs[:, None] + 1, 0).sum(axis=1)
            )
            best = int(np.argmin(cost)) + 1
            if cost[best - 1] < cost[ranks[u] - 1]:
                current -= cost[ranks[u] - 1] - cost[best - 1]
                ranks[u] = best
                improved = True
        ranks, _ = _normalize_ranks(ranks)
        # rank-block merges
        while True:
            mmax = int(ranks.max())
            best_gain, best_level = 0.0, -1
            for lvl in range(1, mmax):
                merged = ranks - (ranks > lvl)
                gain = current - total(merged)
                if gain > best_gain + 1e-9:
                    best_gain, best_level = gain, lvl
            if best_level < 0:
                break
            ranks = ranks - (ranks > best_level)
            current -= best_gain
            improved = True
        if not improved:
            break
    return ranks


def _normalize_ranks(ranks: np.ndarray) -> tuple[np.ndarray, int]:
    vals = np.unique(ranks)
    remap = np.zeros(vals.max() + 1, dtype=np.int64)
    remap[vals] = np.arange(1, len(vals) + 1)
    return remap[ranks], len(vals)


def minimize_agony(graph: PaymentGraph, mode: str = "heuristic", seed: int = 0,
                   max_sweeps: int = 60) -> RankedPartition:
    """Ordered partition minimizing agony; h = 1 - A*/m.

    exact_small (n <= 9) searches all rankings via prefix-set DP. The
    heuristic condenses SCCs, layers the condensation by longest path (all
    inter-SCC edges become forward; large SCCs get internal sub-levels from a
    feedback-arc ordering), then applies single-node rank changes and
    rank-block merges until no improvement.
    """
    if graph.m < 1:
        raise PartitionError("minimize_agony needs at least one edge")
    if mode == "exact_small":
        ranks, a_star = _agony_exact_small(graph)
        ranks, n_groups = _normalize_ranks(ranks)
    elif mode == "heuristic":
        scc = components(graph, "strong")
        sub, height = _scc_internal_layers(graph, scc)
        cross = scc[graph.src] != scc[graph.dst]
        layers = _longest_path_layers(int(scc.max()) + 1, scc[graph.src][cross],
                                      scc[graph.dst][cross], height)
        ranks = layers[scc] + sub + 1
        rng = np.random.default_rng(seed)
        ranks = _local_moves(graph, ranks.astype(np.int64), rng, max_sweeps)
        ranks, n_groups = _normalize_ranks(ranks)
        a_star = agony(graph, ranks)
    else:
        raise PartitionError(f"unknown mode {mode!r}")
    h = 1.0 - a_star / graph.m
    return RankedPartition(ranks, ordered=True, n_groups=n_groups, score=h,
                           method=mode, agony=a_star)


# -- risk enrichment per group -------------------------------------------------------


def group_risk_profiles(
    partition: RankedPartition | Sequence[int],
    ratings: Sequence[str],
    min_rated: int = 500,
    p_s: float = 0.01,
) -> tuple[list[EnrichmentResult], list[int]]:
    """Hypergeometric over/under-representation of each rating in each group.

    Groups with fewer than `min_rated` rated nodes are skipped; the Bonferroni
    correction uses 3 tests per tested group. The population is the rated
    nodes of the analyzed graph.
    """
    assignment = partition.assignment if isinstance(partition, RankedPartition) else np.asarray(partition)
    ratings = np.asarray(ratings)
    if assignment.shape != ratings.shape:
        raise PartitionError("partition and ratings must cover the same node set")
    rated = np.isin(ratings, RISK_CLASSES)
    n_prime = int(rated.sum())
    big_k = {c: int((ratings[rated] == c).sum()) for c in RISK_CLASSES}
    groups = np.unique(assignment)
    tested = [g for g in groups if int((rated & (assignment == g)).sum()) >= min_rated]
    skipped = [int(g) for g in groups if g not in set(tested)]
    n_tests = 3 * len(tested)
    results: list[EnrichmentResult] = []
    for g in tested:
        in_group = rated & (assignment == g)
        n_i = int(in_group.sum())
        for c in RISK_CLASSES:
            k = int((ratings[in_group] == c).sum())
            results.append(hypergeom_test(k, n_i, big_k[c], n_prime,
                                          n_tests=max(n_tests, 1), p_s=p_s,
                                          group=int(g), rating=c))
    return results, skipped


# -- partition comparison -------------------------------------------------------------


def normalized_mutual_information(a: Sequence[int], b: Sequence[int]) -> float:
    """NMI with arithmetic-mean normalization, 2 I(A;B) / (H(A) + H(B))."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise PartitionError("partitions must cover the same nodes")
    n = len(a)
    _, ai = np.unique(a, return_inverse=True)
    _, bi = np.unique(b, return_inverse=True)
    ka, kb = ai.max() + 1, bi.max() + 1
    joint = np.bincount(ai * kb + bi, minlength=ka * kb).reshape(ka, kb) / n
    pa = joint.sum(axis=1)
    pb = joint.sum(axis=0)
    nz = joint > 0
    mi = float((joint[nz] * np.log(joint[nz] / np.outer(pa, pb)[nz])).sum())
    ha = float(-(pa[pa > 0] * np.log(pa[pa > 0])).sum())
    hb = float(-(pb[pb > 0] * np.log(pb[pb > 0])).sum())
    if ha + hb == 0:
        return 1.0
    return 2.0 * mi / (ha + hb)
