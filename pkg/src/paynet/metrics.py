"""Distributional statistics: CCDFs, power-law tails, mixing and assortativity."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import zeta as hurwitz_zeta

from .graph import PaymentGraph, degrees


class FitError(ValueError):
    pass


def ccdf(samples: Sequence[float]) -> np.ndarray:
    """Empirical P(X >= x) at each unique sample value, as an (k, 2) array."""
    x = np.sort(np.asarray(samples, dtype=np.float64))
    if len(x) == 0:
        raise FitError("ccdf of empty sample")
    vals, first = np.unique(x, return_index=True)
    p = 1.0 - first / len(x)
    return np.column_stack([vals, p])


# -- power-law tail fit ---------------------------------------------------------


@dataclass(frozen=True)
class PowerLawFit:
    alpha: float
    xmin: float
    ks: float
    n_tail: int
    discrete: bool


def _ks_continuous(tail: np.ndarray, alpha: float, xmin: float) -> float:
    n = len(tail)
    fit = 1.0 - (tail / xmin) ** (1.0 - alpha)
    lo = np.arange(n) / n
    hi = np.arange(1, n + 1) / n
    return float(np.maximum(np.abs(fit - lo), np.abs(fit - hi)).max())


def _ks_discrete(vals: np.ndarray, counts: np.ndarray, alpha: float, xmin: int) -> float:
    """Sup distance between empirical and fitted CDF over integer support.

    The empirical CDF is constant on gaps between observed values, so the sup
    is attained at an observed value or just below the next one.
    """
    n = counts.sum()
    emp = np.cumsum(counts) / n
    z0 = hurwitz_zeta(alpha, xmin)
    cdf_at = 1.0 - hurwitz_zeta(alpha, vals + 1.0) / z0
    d = np.abs(emp - cdf_at).max()
    if len(vals) > 1:
        cdf_before_next = 1.0 - hurwitz_zeta(alpha, vals[1:]) / z0
        d = max(d, np.abs(emp[:-1] - cdf_before_next).max())
    return float(d)


def powerlaw_fit(
    samples: Sequence[float],
    discrete: bool,
    min_tail: int = 50,
    max_candidates: int = 500,
    exact_scan: bool = False,
) -> PowerLawFit:
    """MLE power-law tail fit with KS-minimizing lower cutoff.

    For each candidate xmin: continuous alpha = 1 + n / sum(ln(x/xmin));
    discrete uses the xmin - 1/2 approximation. The candidate minimizing
    the KS distance between the fitted and empirical tail wins. Candidate
    xmins are the unique sample values; above `max_candidates`, an evenly
    spaced subset over the sorted unique values is scanned (exact scan is
    opt-in).
    """
    x = np.sort(np.asarray(samples, dtype=np.float64))
    if len(x) < min_tail:
        raise FitError(f"need at least {min_tail} samples, got {len(x)}")
    if x[0] <= 0:
        raise FitError("samples must be positive")
    uniq, first_idx, counts = np.unique(x, return_index=True, return_counts=True)
    if len(uniq) < 2:
        raise FitError("degenerate sample: all values equal")
    n_tail_per = len(x) - first_idx
    valid = n_tail_per >= min_tail
    cand_idx = np.flatnonzero(valid)
    if len(cand_idx) == 0:
        raise FitError(f"no candidate cutoff leaves a tail of >= {min_tail} samples")
    if not exact_scan and len(cand_idx) > max_candidates:
        sel = np.unique(np.linspace(0, len(cand_idx) - 1, max_candidates).round().astype(int))
        cand_idx = cand_idx[sel]

    logx = np.log(x)
    cum_log = np.concatenate([[0.0], np.cumsum(logx)])
    total_log = cum_log[-1]

    best: tuple[float, float, float, int] | None = None  # (ks, alpha, xmin, n_tail)
    for ci in cand_idx:
        xmin = uniq[ci]
        i0 = first_idx[ci]
        n = len(x) - i0
        sum_log_tail = total_log - cum_log[i0]
        denom = sum_log_tail - n * np.log(xmin - 0.5 if discrete else xmin)
        if denom <= 0:
            continue
        alpha = 1.0 + n / denom
        if discrete:
            ks = _ks_discrete(uniq[ci:], counts[ci:].astype(np.float64), alpha, int(round(xmin)))
        else:
            ks = _ks_continuous(x[i0:], alpha, xmin)
        if best is None or ks < best[0]:
            best = (ks, alpha, float(xmin), n)
    if best is None:
        raise FitError("no valid cutoff produced a finite exponent")
    ks, alpha, xmin, n_tail = best
    return PowerLawFit(alpha=alpha, xmin=int(round(xmin)) if discrete else xmin,
                       ks=ks, n_tail=n_tail, discrete=discrete)


# -- mixing and assortativity -----------------------------------------------------


@dataclass(frozen=True)
class MixingMatrix:
    """Fractions of edges (or volume) between category pairs."""

    e: np.ndarray
    categories: tuple

    @property
    def a(self) -> np.ndarray:
        return self.e.sum(axis=1)

    @property
    def b(self) -> np.ndarray:
        return self.e.sum(axis=0)


def mixing_matrix(graph: PaymentGraph, labeling: Sequence, weighted: bool = False) -> MixingMatrix:
    """e_ij = fraction of edges (or of volume) from category i to category j."""
    labels = np.asarray(labeling)
    if labels.shape != (graph.n,):
        raise FitError("labeling must assign every node a category")
    if graph.m == 0:
        raise FitError("mixing matrix of edgeless graph")
    cats, codes = np.unique(labels, return_inverse=True)
    k = len(cats)
    flat = codes[graph.src] * k + codes[graph.dst]
    w = graph.weight if weighted else np.ones(graph.m)
    e = np.bincount(flat, weights=w, minlength=k * k).reshape(k, k)
    return MixingMatrix(e / e.sum(), tuple(cats.tolist()))


@dataclass(frozen=True)
class Assortativity:
    r: float
    r_min: float


def assortativity(mix: MixingMatrix) -> Assortativity:
    """Newman's categorical assortativity r = (tr e - sum a_i b_i) / (1 - sum a_i b_i)."""
    ab = float(mix.a @ mix.b)
    if ab >= 1.0 - 1e-12:
        raise FitError("assortativity undefined: single category carries all edges")
    tr = float(np.trace(mix.e))
    return Assortativity(r=(tr - ab) / (1.0 - ab), r_min=-ab / (1.0 - ab))


def log_bin_labels(values: Sequence[float], base: float = 2.0) -> np.ndarray:
    """Logarithmic bin index per value (factor-`base` bins); zeros get bin -1."""
    v = np.asarray(values, dtype=np.float64)
    out = np.full(len(v), -1, dtype=np.int64)
    pos = v > 0
    out[pos] = np.floor(np.log(v[pos]) / np.log(base)).astype(np.int64)
    return out


def degree_class_assortativity(graph: PaymentGraph, attribute: str = "degree", base: float = 2.0) -> float:
    """Assortativity with log-binned degree (or strength) as the category."""
    deg = degrees(graph)
    if attribute == "degree":
        values = deg.total_degree
    elif attribute == "strength":
        values = deg.size_proxy
    elif attribute == "in_degree":
        values = deg.in_degree
    elif attribute == "out_degree":
        values = deg.out_degree
    else:
        raise FitError(f"unknown attribute {attribute!r}")
    return assortativity(mixing_matrix(graph, log_bin_labels(values, base))).r


def size_proxy_tertiles(graph: PaymentGraph) -> np.ndarray:
    """Tertile (1..3) of in-strength + out-strength; ties go to the lower tertile."""
    sizes = degrees(graph).size_proxy
    q1, q2 = np.quantile(sizes, [1.0 / 3.0, 2.0 / 3.0])
    return (1 + (sizes > q1).astype(np.int64) + (sizes > q2).astype(np.int64))
