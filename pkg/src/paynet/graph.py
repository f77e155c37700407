"""Immutable directed weighted graph with firm attributes and topology operations."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

STATUSES = ("customer", "former", "non-customer", "unknown")
RATINGS = ("L", "M", "H", "NA")


class GraphError(ValueError):
    pass


@dataclass(frozen=True)
class FirmMeta:
    """Firm-level attributes attached to graph nodes."""

    id: str
    status: str = "unknown"
    rating: str = "NA"
    sector: str | None = None

    def __post_init__(self) -> None:
        if self.status not in STATUSES:
            raise GraphError(f"invalid status {self.status!r}")
        if self.rating not in RATINGS:
            raise GraphError(f"invalid rating {self.rating!r}")


def _ragged_take(start: np.ndarray, flat: np.ndarray, nodes: np.ndarray) -> np.ndarray:
    """Concatenate flat[start[u]:start[u+1]] for every u in `nodes` (vectorized)."""
    counts = start[nodes + 1] - start[nodes]
    total = int(counts.sum())
    if total == 0:
        return np.empty(0, dtype=flat.dtype)
    cum = np.cumsum(counts)
    pos = np.arange(total, dtype=np.int64)
    seg = np.searchsorted(cum, pos, side="right")
    return flat[start[nodes][seg] + pos - (cum[seg] - counts[seg])]


def _csr_from_edges(heads: np.ndarray, n: int) -> np.ndarray:
    """Index-pointer array for edges already sorted by `heads`."""
    start = np.zeros(n + 1, dtype=np.int64)
    np.add.at(start, heads + 1, 1)
    return np.cumsum(start)


class PaymentGraph:
    """Directed weighted graph over one time window.

    Edges are aggregated (no parallel edges), self-loop free, with strictly
    positive weights. Arrays are read-only after construction; node attribute
    defaults are status="unknown", rating="NA".
    """

    def __init__(
        self,
        node_ids: Sequence[str],
        src: np.ndarray,
        dst: np.ndarray,
        weight: np.ndarray,
        status: Sequence[str] | None = None,
        rating: Sequence[str] | None = None,
        sector: Sequence[str | None] | None = None,
        meta: dict | None = None,
    ):
        n = len(node_ids)
        src = np.asarray(src, dtype=np.int64)
        dst = np.asarray(dst, dtype=np.int64)
        weight = np.asarray(weight, dtype=np.float64)
        if not (len(src) == len(dst) == len(weight)):
            raise GraphError("edge arrays must have equal length")
        if len(src) and (src.min() < 0 or dst.min() < 0 or max(src.max(), dst.max()) >= n):
            raise GraphError("edge endpoint out of range")
        if np.any(src == dst):
            raise GraphError("self-loops are not allowed")
        if np.any(weight <= 0):
            raise GraphError("edge weights must be positive")

        order = np.lexsort((dst, src))
        src, dst, weight = src[order], dst[order], weight[order]
        if len(src) > 1:
            dup = (src[1:] == src[:-1]) & (dst[1:] == dst[:-1])
            if dup.any():
                raise GraphError("parallel edges must be aggregated before construction")

        self._node_ids = tuple(str(i) for i in node_ids)
        self._index = {nid: i for i, nid in enumerate(self._node_ids)}
        if len(self._index) != n:
            raise GraphError("duplicate node ids")
        self._src, self._dst, self._weight = src, dst, weight
        self._out_start = _csr_from_edges(src, n)
        in_order = np.lexsort((src, dst))
        self._in_order = in_order
        self._in_start = _csr_from_edges(dst[in_order], n)
        self._in_src = src[in_order]

        self._status = np.asarray(list(status) if status is not None else ["unknown"] * n, dtype=object)
        self._rating = np.asarray(list(rating) if rating is not None else ["NA"] * n, dtype="U2")
        self._sector = np.asarray(list(sector) if sector is not None else [None] * n, dtype=object)
        for name, values, allowed in (("status", self._status, STATUSES), ("rating", self._rating, RATINGS)):
            bad = set(values) - set(allowed)
            if bad:
                raise GraphError(f"invalid {name} values: {sorted(bad)}")
        self.meta = dict(meta) if meta else {}

        self._und_start: np.ndarray | None = None
        self._und_adj: np.ndarray | None = None
        for a in (self._src, self._dst, self._weight, self._out_start,
                  self._in_order, self._in_start, self._in_src):
            a.setflags(write=False)

    # -- construction helpers -------------------------------------------------

    @classmethod
    def from_edges(
        cls,
        node_ids: Sequence[str],
        src: Iterable[int],
        dst: Iterable[int],
        weight: Iterable[float],
        aggregate: bool = True,
        **kwargs,
    ) -> "PaymentGraph":
        """Build a graph from raw (possibly parallel) edges.

        Parallel edges are weight-summed; self-loops and aggregated edges of
        zero total weight are dropped and counted in graph.meta.
        """
        src = np.asarray(list(src), dtype=np.int64)
        dst = np.asarray(list(dst), dtype=np.int64)
        weight = np.asarray(list(weight), dtype=np.float64)
        meta = dict(kwargs.pop("meta", {}) or {})
        loops = src == dst
        meta.setdefault("self_loops_dropped", int(loops.sum()))
        meta.setdefault("self_loop_amount", float(weight[loops].sum()))
        src, dst, weight = src[~loops], dst[~loops], weight[~loops]
        if aggregate and len(src):
            key = src * len(node_ids) + dst
            uniq, inv = np.unique(key, return_inverse=True)
            agg = np.zeros(len(uniq))
            np.add.at(agg, inv, weight)
            src, dst, weight = uniq // len(node_ids), uniq % len(node_ids), agg
        pos = weight > 0
        meta.setdefault("zero_weight_edges_dropped", int((~pos).sum()))
        return cls(node_ids, src[pos], dst[pos], weight[pos], meta=meta, **kwargs)

    # -- basic accessors ------------------------------------------------------

    @property
    def n(self) -> int:
        return len(self._node_ids)

    @property
    def m(self) -> int:
        return len(self._src)

    @property
    def node_ids(self) -> tuple[str, ...]:
        return self._node_ids

    @property
    def src(self) -> np.ndarray:
        return self._src

    @property
    def dst(self) -> np.ndarray:
        return self._dst

    @property
    def weight(self) -> np.ndarray:
        return self._weight

    @property
    def status(self) -> np.ndarray:
        return self._status

    @property
    def rating(self) -> np.ndarray:
        return self._rating

    @property
    def sector(self) -> np.ndarray:
        return self._sector

    @property
    def total_volume(self) -> float:
        return float(self._weight.sum())

    def index_of(self, node_id: str) -> int:
        return self._index[node_id]

    def node_meta(self, i: int) -> FirmMeta:
        return FirmMeta(self._node_ids[i], self._status[i], self._rating[i], self._sector[i])

    def out_edges(self, u: int) -> tuple[np.ndarray, np.ndarray]:
        lo, hi = self._out_start[u], self._out_start[u + 1]
        return self._dst[lo:hi], self._weight[lo:hi]

    def in_edges(self, u: int) -> tuple[np.ndarray, np.ndarray]:
        lo, hi = self._in_start[u], self._in_start[u + 1]
        return self._in_src[lo:hi], self._weight[self._in_order[lo:hi]]

    def out_neighbors_of(self, nodes: np.ndarray) -> np.ndarray:
        return _ragged_take(self._out_start, self._dst, nodes)

    def in_neighbors_of(self, nodes: np.ndarray) -> np.ndarray:
        return _ragged_take(self._in_start, self._in_src, nodes)

    # -- undirected view ------------------------------------------------------

    def _undirected(self) -> tuple[np.ndarray, np.ndarray]:
        if self._und_start is None:
            heads = np.concatenate([self._src, self._dst])
            tails = np.concatenate([self._dst, self._src])
            key = heads * self.n + tails
            uniq = np.unique(key)
            heads, tails = uniq // self.n, uniq % self.n
            self._und_start = _csr_from_edges(heads, self.n)
            self._und_adj = tails
            self._und_start.setflags(write=False)
            self._und_adj.setflags(write=False)
        return self._und_start, self._und_adj

    def bfs_distances(self, source: int, direction: str = "out") -> np.ndarray:
        """Hop distances from `source`; -1 where unreachable."""
        if direction == "out":
            start, adj = self._out_start, self._dst
        elif direction == "in":
            start, adj = self._in_start, self._in_src
        elif direction == "undirected":
            start, adj = self._undirected()
        else:
            raise GraphError(f"unknown direction {direction!r}")
        dist = np.full(self.n, -1, dtype=np.int64)
        dist[source] = 0
        frontier = np.array([source], dtype=np.int64)
        d = 0
        while len(frontier):
            nxt = _ragged_take(start, adj, frontier)
            nxt = np.unique(nxt)
            nxt = nxt[dist[nxt] < 0]
            d += 1
            dist[nxt] = d
            frontier = nxt
        return dist

    def _reach(self, sources: np.ndarray, start: np.ndarray, adj: np.ndarray) -> np.ndarray:
        seen = np.zeros(self.n, dtype=bool)
        seen[sources] = True
        frontier = np.asarray(sources, dtype=np.int64)
        while len(frontier):
            nxt = np.unique(_ragged_take(start, adj, frontier))
            nxt = nxt[~seen[nxt]]
            seen[nxt] = True
            frontier = nxt
        return seen

    # -- subgraphs ------------------------------------------------------------

    def subgraph(self, predicate: Callable[[FirmMeta], bool] | np.ndarray) -> "PaymentGraph":
        """Induced subgraph on nodes where `predicate(meta)` is true (or mask)."""
        if callable(predicate):
            mask = np.fromiter(
                (bool(predicate(self.node_meta(i))) for i in range(self.n)),
                dtype=bool, count=self.n,
            )
        else:
            mask = np.asarray(predicate, dtype=bool)
            if mask.shape != (self.n,):
                raise GraphError("mask length must equal node count")
        keep = np.flatnonzero(mask)
        remap = np.full(self.n, -1, dtype=np.int64)
        remap[keep] = np.arange(len(keep))
        emask = mask[self._src] & mask[self._dst]
        return PaymentGraph(
            [self._node_ids[i] for i in keep],
            remap[self._src[emask]],
            remap[self._dst[emask]],
            self._weight[emask],
            status=self._status[keep],
            rating=self._rating[keep],
            sector=self._sector[keep],
        )

    def same_structure(self, other: "PaymentGraph") -> bool:
        return (
            self._node_ids == other._node_ids
            and np.array_equal(self._src, other._src)
            and np.array_equal(self._dst, other._dst)
            and np.allclose(self._weight, other._weight, rtol=1e-6)
            and np.array_equal(self._rating, other._rating)
            and np.array_equal(self._status, other._status)
        )


# -- degrees ------------------------------------------------------------------


@dataclass(frozen=True)
class DegreeTable:
    in_degree: np.ndarray
    out_degree: np.ndarray
    in_strength: np.ndarray
    out_strength: np.ndarray

    @property
    def total_degree(self) -> np.ndarray:
        return self.in_degree + self.out_degree

    @property
    def size_proxy(self) -> np.ndarray:
        """Sum of in- and out-strength, the stand-in for firm size."""
        return self.in_strength + self.out_strength


def degrees(graph: PaymentGraph) -> DegreeTable:
    n = graph.n
    out_degree = np.diff(graph._out_start)
    in_degree = np.diff(graph._in_start)
    out_strength = np.zeros(n)
    in_strength = np.zeros(n)
    np.add.at(out_strength, graph.src, graph.weight)
    np.add.at(in_strength, graph.dst, graph.weight)
    return DegreeTable(in_degree, out_degree, in_strength, out_strength)


# -- connectivity -------------------------------------------------------------


def components(graph: PaymentGraph, mode: str = "weak") -> np.ndarray:
    """Component labels (0..k-1, ordered by first member node index)."""
    if mode == "weak":
        return _weak_components(graph)
    if mode == "strong":
        return _strong_components(graph)
    raise GraphError(f"unknown mode {mode!r}")


def _weak_components(graph: PaymentGraph) -> np.ndarray:
    start, adj = graph._undirected()
    labels = np.full(graph.n, -1, dtype=np.int64)
    next_label = 0
    for u in range(graph.n):
        if labels[u] >= 0:
            continue
        labels[u] = next_label
        frontier = np.array([u], dtype=np.int64)
        while len(frontier):
            nxt = np.unique(_ragged_take(start, adj, frontier))
            nxt = nxt[labels[nxt] < 0]
            labels[nxt] = next_label
            frontier = nxt
        next_label += 1
    return labels


def _strong_components(graph: PaymentGraph) -> np.ndarray:
    """Iterative Tarjan; labels renumbered by first member node index."""
    n = graph.n
    out_start, dst = graph._out_start, graph._dst
    index = np.full(n, -1, dtype=np.int64)
    low = np.zeros(n, dtype=np.int64)
    on_stack = np.zeros(n, dtype=bool)
    comp = np.full(n, -1, dtype=np.int64)
    stack: list[int] = []
    counter = 0
    n_comp = 0
    for root in range(n):
        if index[root] >= 0:
            continue
        work = [(root, 0)]
        while work:
            v, ei = work[-1]
            if ei == 0:
                index[v] = low[v] = counter
                counter += 1
                stack.append(v)
                on_stack[v] = True
            advanced = False
            edges = dst[out_start[v]:out_start[v + 1]]
            while ei < len(edges):
                w = int(edges[ei])
                ei += 1
                if index[w] < 0:
                    work[-1] = (v, ei)
                    work.append((w, 0))
                    advanced = True
                    break
                if on_stack[w]:
                    low[v] = min(low[v], index[w])
            if advanced:
                continue
            work.pop()
            if low[v] == index[v]:
                while True:
                    w = stack.pop()
                    on_stack[w] = False
                    comp[w] = n_comp
                    if w == v:
                        break
                n_comp += 1
            if work:
                parent = work[-1][0]
                low[parent] = min(low[parent], low[v])
    # renumber by first appearance
    first = np.full(n_comp, n, dtype=np.int64)
    for u in range(n):
        first[comp[u]] = min(first[comp[u]], u)
    order = np.argsort(first, kind="stable")
    rank = np.empty(n_comp, dtype=np.int64)
    rank[order] = np.arange(n_comp)
    return rank[comp]


@dataclass(frozen=True)
class BowTie:
    """Largest-SCC bow-tie decomposition (node index arrays)."""

    scc: np.ndarray
    in_comp: np.ndarray
    out_comp: np.ndarray
    tendrils_other: np.ndarray
    payers_only: np.ndarray
    degenerate: bool = False  # no SCC of size >= 2 (pure DAG); scc is a tie-broken singleton
    n_outside_gwc: int = 0


def bow_tie(graph: PaymentGraph) -> BowTie:
    if graph.n == 0:
        empty = np.empty(0, dtype=np.int64)
        return BowTie(empty, empty, empty, empty, empty, degenerate=True)
    strong = components(graph, "strong")
    sizes = np.bincount(strong)
    degenerate = bool(sizes.max() < 2)
    if degenerate:
        deg = degrees(graph)
        scc_nodes = np.array([int(np.argmax(deg.total_degree))], dtype=np.int64)
    else:
        scc_nodes = np.flatnonzero(strong == int(np.argmax(sizes)))
    in_scc = np.zeros(graph.n, dtype=bool)
    in_scc[scc_nodes] = True

    fwd = graph._reach(scc_nodes, graph._out_start, graph._dst)
    bwd = graph._reach(scc_nodes, graph._in_start, graph._in_src)
    out_comp = np.flatnonzero(fwd & ~in_scc)
    in_comp = np.flatnonzero(bwd & ~in_scc)

    weak = components(graph, "weak")
    gwc_label = int(np.argmax(np.bincount(weak)))
    gwc = weak == gwc_label
    rest = gwc & ~in_scc & ~fwd & ~bwd
    payers_only = np.flatnonzero(np.diff(graph._in_start) == 0)
    return BowTie(
        scc=scc_nodes,
        in_comp=in_comp,
        out_comp=out_comp,
        tendrils_other=np.flatnonzero(rest),
        payers_only=payers_only,
        degenerate=degenerate,
        n_outside_gwc=int((~gwc).sum()),
    )


# -- scalar metrics -----------------------------------------------------------


def density(n: int, m: int) -> float:
    """Edge density m / (n (n - 1)) of a simple directed graph."""
    if n < 2:
        raise GraphError("density undefined for n < 2")
    return m / (n * (n - 1))


@dataclass(frozen=True)
class DiameterResult:
    value: int
    method: str
    lower: int
    upper: int | None
    restricted_to_giant: bool


def _eccentricity(graph: PaymentGraph, source: int) -> tuple[int, int]:
    dist = graph.bfs_distances(source, "undirected")
    reach = dist >= 0
    far = int(np.argmax(np.where(reach, dist, -1)))
    return int(dist[far]), far


def diameter(graph: PaymentGraph, mode: str = "double_sweep_bound", sweeps: int = 4, seed: int = 0) -> DiameterResult:
    """Hop diameter of the largest weakly connected component.

    exact: max eccentricity via all-source BFS. double_sweep_bound: lower
    bound from repeated double sweeps, upper bound 2*ecc(center candidate).
    """
    if graph.n == 0:
        raise GraphError("diameter of empty graph")
    weak = components(graph, "weak")
    counts = np.bincount(weak)
    restricted = len(counts) > 1
    g = graph.subgraph(weak == int(np.argmax(counts))) if restricted else graph
    if g.n == 1:
        return DiameterResult(0, mode, 0, 0, restricted)

    if mode == "exact":
        best = 0
        for u in range(g.n):
            ecc, _ = _eccentricity(g, u)
            best = max(best, ecc)
        return DiameterResult(best, "exact", best, best, restricted)
    if mode != "double_sweep_bound":
        raise GraphError(f"unknown mode {mode!r}")

    rng = np.random.default_rng(seed)
    deg = degrees(g).total_degree
    starts = [int(np.argmax(deg))] + [int(x) for x in rng.integers(0, g.n, size=max(0, sweeps - 1))]
    lower = 0
    upper = None
    for s in starts:
        _, far = _eccentricity(g, s)
        ecc2, far2 = _eccentricity(g, far)
        lower = max(lower, ecc2)
        # center candidate: a midpoint of the sweep path, found via distances
        d_far = g.bfs_distances(far, "undirected")
        d_far2 = g.bfs_distances(far2, "undirected")
        on_path = (d_far >= 0) & (d_far2 >= 0) & (d_far + d_far2 == ecc2)
        if on_path.any():
            mid = int(np.flatnonzero(on_path)[np.argmin(np.abs(d_far[on_path] - ecc2 // 2))])
            ecc_mid, _ = _eccentricity(g, mid)
            cand = 2 * ecc_mid
            upper = cand if upper is None else min(upper, cand)
    return DiameterResult(lower, "double_sweep_bound", lower, upper, restricted)


def closeness(graph: PaymentGraph, node: int) -> float:
    """Harmonic-mean closeness over directed out-distances; 1/inf = 0."""
    if node < 0 or node >= graph.n:
        raise GraphError("node out of range")
    if graph.n < 2:
        return 0.0
    dist = graph.bfs_distances(node, "out")
    reach = (dist > 0)
    return float((1.0 / dist[reach]).sum() / (graph.n - 1))


# -- serialization ------------------------------------------------------------


def write_graph(graph: PaymentGraph, edges_path, nodes_path) -> None:
    """Edge-list (src,dst,weight) plus node-attribute sidecar, in node-index order."""
    with open(edges_path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["src", "dst", "weight"])
        ids = graph.node_ids
        for s, d, wt in zip(graph.src, graph.dst, graph.weight):
            w.writerow([ids[s], ids[d], repr(float(wt))])
    with open(nodes_path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["id", "status", "rating", "sector"])
        for i, nid in enumerate(graph.node_ids):
            w.writerow([nid, graph.status[i], graph.rating[i], graph.sector[i] or ""])


def read_graph(edges_path, nodes_path) -> PaymentGraph:
    ids: list[str] = []
    status: list[str] = []
    rating: list[str] = []
    sector: list[str | None] = []
    with open(nodes_path, newline="") as f:
        for row in csv.DictReader(f):
            ids.append(row["id"])
            status.append(row["status"])
            rating.append(row["rating"])
            sector.append(row["sector"] or None)
    index = {nid: i for i, nid in enumerate(ids)}
    src: list[int] = []
    dst: list[int] = []
    weight: list[float] = []
    with open(edges_path, newline="") as f:
        for row in csv.DictReader(f):
            src.append(index[row["src"]])
            dst.append(index[row["dst"]])
            weight.append(float(row["weight"]))
    return PaymentGraph(ids, np.array(src, dtype=np.int64), np.array(dst, dtype=np.int64),
                        np.array(weight), status=status, rating=rating, sector=sector)
