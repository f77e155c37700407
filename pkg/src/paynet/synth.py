"""Synthetic payment networks with planted ground truth: heavy-tailed degree
sequences, rating homophily, hierarchies, and modular structure."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.stats import zipf

from .graph import RATINGS, PaymentGraph
from .metrics import mixing_matrix


class SynthError(ValueError):
    pass


@dataclass
class SynthSpec:
    """Config container for the generators (JSON-loadable)."""

    n: int = 1000
    degree_alpha_in: float = 2.5
    degree_alpha_out: float = 2.8
    rating_prior: tuple[float, ...] = (0.3, 0.35, 0.1, 0.25)  # L, M, H, NA
    mixing: list[list[float]] | None = None
    n_modules: int = 4
    module_enrichment: list[dict] | None = None
    p_in: float = 0.05
    p_out: float = 0.002
    n_ranks: int = 10
    forward_edge_prob: float = 0.9
    mean_degree: float = 6.0
    seed: int = 0

    def __post_init__(self) -> None:
        if abs(sum(self.rating_prior) - 1.0) > 1e-9:
            raise SynthError("rating_prior must sum to 1")
        if self.mixing is not None:
            for row in self.mixing:
                if abs(sum(row) - 1.0) > 1e-9:
                    raise SynthError("mixing rows must sum to 1")
        if not (0.0 <= self.forward_edge_prob <= 1.0):
            raise SynthError("forward_edge_prob must be in [0, 1]")

    @classmethod
    def from_json(cls, path) -> "SynthSpec":
        with open(path) as f:
            raw = json.load(f)
        if "rating_prior" in raw:
            raw["rating_prior"] = tuple(raw["rating_prior"])
        return cls(**raw)


def _make_graph(n: int, src: np.ndarray, dst: np.ndarray, weight: np.ndarray,
                rating: Sequence[str] | None = None, status: Sequence[str] | None = None,
                meta: dict | None = None) -> PaymentGraph:
    ids = [f"F{i:07d}" for i in range(n)]
    return PaymentGraph.from_edges(ids, src, dst, weight, rating=rating, status=status, meta=meta)


def _lognormal_weights(rng: np.random.Generator, m: int, sigma: float = 1.0) -> np.ndarray:
    return np.exp(rng.normal(4.0, sigma, size=m)).round(2) + 0.01


# -- configuration-model power-law digraph ----------------------------------------------


def gen_powerlaw_digraph(n: int, alpha_in: float, alpha_out: float, seed: int = 0,
                         weight_sigma: float = 1.0, max_attempts: int = 10) -> PaymentGraph:
    """Directed configuration model from zeta-sampled in/out degree sequences.

    Degree sums are equalized by trimming random entries of the larger side;
    self-loops are dropped and multi-edges collapsed, with log-normal weights.
    """
    if alpha_in <= 2 or alpha_out <= 2:
        raise SynthError("tail exponents must exceed 2 (finite mean)")
    rng = np.random.default_rng(seed)
    for _ in range(max_attempts):
        d_in = zipf.rvs(alpha_in, size=n, random_state=rng).astype(np.int64)
        d_out = zipf.rvs(alpha_out, size=n, random_state=rng).astype(np.int64)
        if d_in.max() >= n or d_out.max() >= n:
            continue
        d_in, d_out = _equalize_sums(d_in, d_out, rng)
        if d_in is None:
            continue
        src = np.repeat(np.arange(n), d_out)
        dst = np.repeat(np.arange(n), d_in)
        rng.shuffle(src)
        rng.shuffle(dst)
        g = _make_graph(n, src, dst, _lognormal_weights(rng, len(src), weight_sigma),
                        meta={"planted_alpha_in": alpha_in, "planted_alpha_out": alpha_out})
        if g.m > 0:
            return g
    raise SynthError("could not realize a feasible degree sequence")


def _equalize_sums(d_in: np.ndarray, d_out: np.ndarray,
                   rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray] | tuple[None, None]:
    for _ in range(1000):
        diff = int(d_in.sum() - d_out.sum())
        if diff == 0:
            return d_in, d_out
        side = d_in if diff > 0 else d_out
        eligible = np.flatnonzero(side > 1)
        if len(eligible) == 0:
            return None, None
        take = rng.choice(eligible, size=min(abs(diff), len(eligible)), replace=False)
        side[take] -= 1
    return None, None


# -- rating homophily planting -----------------------------------------------------------


def plant_ratings(graph: PaymentGraph, prior: Sequence[float],
                  mixing_target: np.ndarray, sweeps: int = 30,
                  tol: float = 0.01, seed: int = 0) -> tuple[np.ndarray, dict]:
    """Assign ratings i.i.d. from the prior, then hill-climb label swaps toward
    a target weighted mixing matrix.

    Swaps preserve the rating multiset exactly. Stops when every matrix entry
    is within `tol` of the target or after `sweeps` full sweeps; returns the
    ratings and an achieved-mixing report.
    """
    prior = np.asarray(prior, dtype=np.float64)
    cats = [c for c, p in zip(RATINGS[: len(prior)], prior) if p > 0]
    probs = prior[prior > 0]
    probs = probs / probs.sum()
    target = np.asarray(mixing_target, dtype=np.float64)
    if target.shape != (len(cats), len(cats)):
        raise SynthError(f"mixing target must be {len(cats)}x{len(cats)} for prior support {cats}")
    rng = np.random.default_rng(seed)
    n = graph.n
    codes = rng.choice(len(cats), size=n, p=probs)

    w = graph.weight
    total = w.sum()
    k = len(cats)
    vol = np.zeros((k, k))
    np.add.at(vol, (codes[graph.src], codes[graph.dst]), w)

    out_e: list[tuple[np.ndarray, np.ndarray]] = [graph.out_edges(u) for u in range(n)]
    in_e: list[tuple[np.ndarray, np.ndarray]] = [graph.in_edges(u) for u in range(n)]

    def node_delta(u: int, old: int, new: int, vol_: np.ndarray) -> None:
        tgt, wt = out_e[u]
        np.add.at(vol_, (np.full(len(tgt), old), codes[tgt]), -wt)
        np.add.at(vol_, (np.full(len(tgt), new), codes[tgt]), wt)
        srcs, wt = in_e[u]
        np.add.at(vol_, (codes[srcs], np.full(len(srcs), old)), -wt)
        np.add.at(vol_, (codes[srcs], np.full(len(srcs), new)), wt)

    def dist(vol_: np.ndarray) -> float:
        return float(np.abs(vol_ / total - target).sum())

    current = dist(vol)
    converged = False
    for _ in range(sweeps):
        if np.abs(vol / total - target).max() <= tol:
            converged = True
            break
        accepted = 0
        us = rng.integers(0, n, size=n)
        vs = rng.integers(0, n, size=n)
        for u, v in zip(us, vs):
            u, v = int(u), int(v)
            cu, cv = int(codes[u]), int(codes[v])
            if cu == cv:
                continue
            trial = vol.copy()
            node_delta(u, cu, cv, trial)
            codes[u] = cv
            node_delta(v, cv, cu, trial)
            codes[u] = cu
            cand = dist(trial)
            if cand < current - 1e-12:
                codes[u], codes[v] = cv, cu
                vol = trial
                current = cand
                accepted += 1
        if accepted == 0:
            break
    achieved = vol / total
    report = {
        "achieved_mixing": achieved.tolist(),
        "max_entry_error": float(np.abs(achieved - target).max()),
        "converged": bool(converged or np.abs(achieved - target).max() <= tol),
        "categories": cats,
    }
    return np.array([cats[c] for c in codes], dtype="U2"), report


# -- planted hierarchy --------------------------------------------------------------------


def gen_hierarchy_graph(n: int, n_ranks: int, noise: float, m: int | None = None,
                        seed: int = 0, lateral_frac: float = 1.0,
                        weight_sigma: float = 1.0) -> tuple[PaymentGraph, np.ndarray]:
    """Planted ranked digraph: forward edges go one rank up; noise edges are
    lateral (same rank, the default) or one step backward per `lateral_frac`.

    At the planted ranking every lateral edge costs exactly 1, so with the
    default the planted agony equals the non-forward edge count. Returns the
    graph and the planted ranks (1..n_ranks); noise 0 gives a DAG.
    """
    if n_ranks < 2:
        raise SynthError("need at least 2 ranks")
    if not (0.0 <= noise < 1.0):
        raise SynthError("noise must be in [0, 1)")
    rng = np.random.default_rng(seed)
    if m is None:
        m = 5 * n
    ranks = 1 + (np.arange(n) % n_ranks)
    rng.shuffle(ranks)
    by_rank = [np.flatnonzero(ranks == r) for r in range(1, n_ranks + 1)]

    n_noise = int(round(noise * m))
    n_fwd = m - n_noise
    src_parts, dst_parts = [], []

    lo = rng.integers(0, n_ranks - 1, size=n_fwd)  # forward: rank r -> r+1
    src_parts.append(_pick(by_rank, lo, rng))
    dst_parts.append(_pick(by_rank, lo + 1, rng))

    n_lat = int(round(lateral_frac * n_noise))
    lv = rng.integers(0, n_ranks, size=n_lat)
    src_parts.append(_pick(by_rank, lv, rng))
    dst_parts.append(_pick(by_rank, lv, rng))

    n_back = n_noise - n_lat
    bv = rng.integers(0, n_ranks - 1, size=n_back)  # backward: rank r+1 -> r
    src_parts.append(_pick(by_rank, bv + 1, rng))
    dst_parts.append(_pick(by_rank, bv, rng))

    src = np.concatenate(src_parts)
    dst = np.concatenate(dst_parts)
    g = _make_graph(n, src, dst, _lognormal_weights(rng, len(src), weight_sigma),
                    meta={"planted_n_ranks": n_ranks, "planted_noise": noise})
    return g, ranks


def _pick(by_rank: list[np.ndarray], levels: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    out = np.empty(len(levels), dtype=np.int64)
    for lvl in np.unique(levels):
        sel = levels == lvl
        out[sel] = rng.choice(by_rank[lvl], size=int(sel.sum()), replace=True)
    return out


# -- planted modules -----------------------------------------------------------------------


def gen_modular_graph(
    n: int, n_modules: int, p_in: float, p_out: float,
    per_module_rating_bias: Sequence[Sequence[float]] | None = None,
    seed: int = 0, sizes: Sequence[int] | None = None, weight_sigma: float = 1.0,
) -> tuple[PaymentGraph, np.ndarray, np.ndarray | None]:
    """Directed planted-partition graph with optional module-specific rating priors.

    Returns (graph, module labels 1..K, ratings or None). Requires p_in > p_out.
    """
    if p_in <= p_out:
        raise SynthError("planted partition requires p_in > p_out")
    rng = np.random.default_rng(seed)
    if sizes is None:
        sizes = [n // n_modules + (1 if i < n % n_modules else 0) for i in range(n_modules)]
    if sum(sizes) != n or len(sizes) != n_modules:
        raise SynthError("sizes must sum to n over n_modules entries")
    modules = np.repeat(np.arange(1, n_modules + 1), sizes)
    bounds = np.concatenate([[0], np.cumsum(sizes)])

    src_parts, dst_parts = [], []
    for a in range(n_modules):
        for b in range(n_modules):
            na, nb = sizes[a], sizes[b]
            pairs = na * nb - (na if a == b else 0)
            p = p_in if a == b else p_out
            cnt = rng.binomial(pairs, p)
            if cnt == 0:
                continue
            s = rng.integers(bounds[a], bounds[a + 1], size=cnt)
            d = rng.integers(bounds[b], bounds[b + 1], size=cnt)
            keep = s != d
            src_parts.append(s[keep])
            dst_parts.append(d[keep])
    src = np.concatenate(src_parts) if src_parts else np.empty(0, dtype=np.int64)
    dst = np.concatenate(dst_parts) if dst_parts else np.empty(0, dtype=np.int64)

    ratings = None
    if per_module_rating_bias is not None:
        if len(per_module_rating_bias) != n_modules:
            raise SynthError("one rating prior per module required")
        ratings = np.empty(n, dtype="U2")
        for mi, prior in enumerate(per_module_rating_bias):
            prior = np.asarray(prior, dtype=np.float64)
            if abs(prior.sum() - 1.0) > 1e-9:
                raise SynthError("module rating priors must sum to 1")
            block = slice(bounds[mi], bounds[mi + 1])
            ratings[block] = rng.choice(RATINGS[: len(prior)], size=sizes[mi], p=prior)

    g = _make_graph(n, src, dst, _lognormal_weights(rng, len(src), weight_sigma),
                    rating=ratings, meta={"planted_modules": n_modules})
    return g, modules, ratings


def achieved_weighted_mixing(graph: PaymentGraph, ratings: Sequence[str]) -> np.ndarray:
    """Weighted mixing matrix of a rating assignment (diagnostic helper)."""
    return mixing_matrix(graph, np.asarray(ratings), weighted=True).e
