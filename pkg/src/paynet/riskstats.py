"""Risk-topology statistics: rating-degree curves, cumulative logit, distance
shells, hypergeometric enrichment with Bonferroni, excess-volume distributions,
and Mann-Whitney comparisons."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .graph import PaymentGraph, degrees
from .metrics import mixing_matrix

RISK_CLASSES = ("L", "M", "H")

# exact big-integer tail sums below this population size; log-space above
_EXACT_N_LIMIT = 200


class StatsError(ValueError):
    pass


# -- rating conditional on degree --------------------------------------------------


def rating_given_degree(graph: PaymentGraph, direction: str = "out") -> dict[int, tuple[float, float, float]]:
    """Empirical P(rating | degree) over rated nodes; NA excluded from denominators."""
    if direction not in ("in", "out"):
        raise StatsError(f"unknown direction {direction!r}")
    deg = degrees(graph)
    k = deg.in_degree if direction == "in" else deg.out_degree
    rated = np.isin(graph.rating, RISK_CLASSES)
    if not rated.any():
        raise StatsError("no rated nodes")
    table: dict[int, tuple[float, float, float]] = {}
    for d in np.unique(k[rated]):
        sel = rated & (k == d)
        total = sel.sum()
        table[int(d)] = tuple(float((graph.rating[sel] == c).sum() / total) for c in RISK_CLASSES)
    return table


# -- cumulative logit ---------------------------------------------------------------


@dataclass
class CumulativeLogitModel:
    """Two independent binary cumulative splits: P(r<=L) and P(r<=M)."""

    a_L: float
    b_L: np.ndarray
    a_M: float
    b_M: np.ndarray
    se_L: np.ndarray = field(default_factory=lambda: np.empty(0))
    se_M: np.ndarray = field(default_factory=lambda: np.empty(0))
    converged: bool = True
    separation_flag: bool = False
    ordering_violations: int = 0

    def cumulative_probs(self, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        pL = _sigmoid(self.a_L + X @ self.b_L)
        pM = _sigmoid(self.a_M + X @ self.b_M)
        return pL, pM


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def binary_logit_loglik_grad(beta: np.ndarray, Xb: np.ndarray, z: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean log-likelihood and its gradient for one cumulative split."""
    eta = Xb @ beta
    p = _sigmoid(eta)
    eps = 1e-12
    ll = float(np.mean(z * np.log(p + eps) + (1 - z) * np.log(1 - p + eps)))
    grad = Xb.T @ (z - p) / len(z)
    return ll, grad

def _fit_binary_logit(Xb: np.ndarray, z: np.ndarray, tol: float, max_iter: int,
                      cap: float = 20.0) -> tuple[np.ndarray, np.ndarray, bool, bool]:
    beta = np.zeros(Xb.shape[1])
    separated = False
    converged = False
    for _ in range(max_iter):
        p = _sigmoid(Xb @ beta)
        grad = Xb.T @ (z - p) / len(z)
        if np.linalg.norm(grad) < tol:
            converged = True
            break
        w = np.maximum(p * (1 - p), 1e-10)
        hess = (Xb * w[:, None]).T @ Xb / len(z)
        try:
            step = np.linalg.solve(hess, grad)
        except np.linalg.LinAlgError:
            step = grad
        beta = beta + step
        if np.any(np.abs(beta) > cap):
            beta = np.clip(beta, -cap, cap)
            separated = True
            break
    p = _sigmoid(Xb @ beta)
    w = np.maximum(p * (1 - p), 1e-10)
    try:
        cov = np.linalg.inv((Xb * w[:, None]).T @ Xb)
        se = np.sqrt(np.clip(np.diag(cov), 0, None))
    except np.linalg.LinAlgError:
        se = np.full(Xb.shape[1], np.nan)
    return beta, se, converged, separated


def fit_cumulative_logit(X: np.ndarray, y: Sequence[str], tol: float = 1e-6,
                         max_iter: int = 500) -> CumulativeLogitModel:
    """Fit log(P(r<=L)/P(r>L)) = a_L + b_L.X and the analogous r<=M split.

    The two splits have independent slopes, so they decouple into two binary
    logistic MLE problems solved by Newton iteration (convergence: gradient
    norm < tol). Perfect separation flags the model and caps coefficients.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[0] != len(y):
        X = X.T
    if not np.all(np.isfinite(X)):
        raise StatsError("predictors must be finite")
    codes = np.array([RISK_CLASSES.index(c) for c in y])
    if len(np.unique(codes)) < 2:
        raise StatsError("need at least 2 distinct ratings")
    Xb = np.column_stack([np.ones(len(codes)), X])
    beta_L, se_L, conv_L, sep_L = _fit_binary_logit(Xb, (codes <= 0).astype(float), tol, max_iter)
    beta_M, se_M, conv_M, sep_M = _fit_binary_logit(Xb, (codes <= 1).astype(float), tol, max_iter)
    model = CumulativeLogitModel(
        a_L=float(beta_L[0]), b_L=beta_L[1:], a_M=float(beta_M[0]), b_M=beta_M[1:],
        se_L=se_L[1:], se_M=se_M[1:],
        converged=conv_L and conv_M, separation_flag=sep_L or sep_M,
    )
    pL, pM = model.cumulative_probs(X)
    model.ordering_violations = int((pL > pM + 1e-12).sum())
    return model


# -- distance-conditional rating shells -----------------------------------------------


def distance_conditional_ratings(
    graph: PaymentGraph, source_rating: str, k_max: int = 13
) -> dict[int, tuple[float, float, float, int]]:
    """Rating shares among rated nodes at directed distance k from rated sources.

    Shares are pair-count normalized: at each k, the share of rating X is
    #{(i,j): d(i,j)=k, j rated X} / #{(i,j): d(i,j)=k, j rated}.
    """
    if source_rating not in RISK_CLASSES:
        raise StatsError(f"invalid source rating {source_rating!r}")
    if k_max < 1:
        raise StatsError("k_max must be >= 1")
    rated = np.isin(graph.rating, RISK_CLASSES)
    if not rated.any():
        raise StatsError("no rated nodes")
    rating_code = np.full(graph.n, -1, dtype=np.int64)
    for ci, c in enumerate(RISK_CLASSES):
        rating_code[graph.rating == c] = ci
    sources = np.flatnonzero(graph.rating == source_rating)
    counts = np.zeros((k_max + 1, len(RISK_CLASSES)), dtype=np.int64)
    for s in sources:
        dist = _bfs_bounded(graph, int(s), k_max)
        sel = (dist >= 1) & rated
        sel[s] = False
        np.add.at(counts, (dist[sel], rating_code[sel]), 1)
    table: dict[int, tuple[float, float, float, int]] = {}
    for k in range(1, k_max + 1):
        tot = int(counts[k].sum())
        if tot == 0:
            continue
        table[k] = (*(float(c / tot) for c in counts[k]), tot)
    return table


def _bfs_bounded(graph: PaymentGraph, source: int, k_max: int) -> np.ndarray:
    dist = np.full(graph.n, -1, dtype=np.int64)
    dist[source] = 0
    frontier = np.array([source], dtype=np.int64)
    for d in range(1, k_max + 1):
        nxt = np.unique(graph.out_neighbors_of(frontier))
        nxt = nxt[dist[nxt] < 0]
        if len(nxt) == 0:
            break
        dist[nxt] = d
        frontier = nxt
    return dist


# -- hypergeometric enrichment -----------------------------------------------------


@dataclass(frozen=True)
class EnrichmentResult:
    group: object
    rating: str
    k: int
    n: int
    K: int
    N: int
    p_value: float
    direction: str  # "over" | "under"
    significant: bool
    tie: bool = False
    threshold: float = float("nan")


def hypergeom_tail(k: int, n: int, K: int, N: int, upper: bool) -> float:
    """P(y >= k) (upper) or P(y <= k) for y ~ Hypergeom(N, K, n).

    Exact big-integer arithmetic for N <= 200; log-space summation above
    (positive terms only, so relative accuracy stays near machine epsilon).
    """
    lo = max(0, n + K - N)
    hi = min(n, K)
    if upper:
        js = range(max(k, lo), hi + 1)
    else:
        js = range(lo, min(k, hi) + 1)
    js = list(js)
    if not js:
        return 0.0
    if N <= _EXACT_N_LIMIT:
        num = sum(math.comb(K, j) * math.comb(N - K, n - j) for j in js)
        return num / math.comb(N, n)
    jarr = np.array(js, dtype=np.float64)
    logpmf = (
        _lchoose(K, jarr) + _lchoose(N - K, n - jarr) - _lchoose(N, n)
    )
    mx = logpmf.max()
    return float(np.exp(mx) * np.exp(logpmf - mx).sum())


def _lchoose(a, b) -> np.ndarray:
    from scipy.special import gammaln

    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return gammaln(a + 1) - gammaln(b + 1) - gammaln(a - b + 1)


def hypergeom_test(
    k: int, n: int, K: int, N: int,
    n_tests: int = 1, p_s: float = 0.01,
    group: object = None, rating: str = "",
) -> EnrichmentResult:
    """Over/under-representation test of one rating within one group.

    p = P(y >= k) when k/n > K/N, else P(y <= k); direction ties default to
    the under branch and are flagged. Significance uses the Bonferroni
    threshold p_s / n_tests.
    """
    if not (0 <= k <= min(n, K)) or n > N or K > N or n < 0 or K < 0 or N <= 0:
        raise StatsError(f"invalid counts k={k} n={n} K={K} N={N}")
    if n_tests < 1 or not (0 < p_s < 1):
        raise StatsError("invalid test configuration")
    over = k * N > K * n
    tie = k * N == K * n
    p = hypergeom_tail(k, n, K, N, upper=over)
    threshold = p_s / n_tests
    return EnrichmentResult(
        group=group, rating=rating, k=k, n=n, K=K, N=N,
        p_value=p, direction="over" if over else "under",
        significant=bool(p < threshold), tie=tie, threshold=threshold,
    )


# -- excess volume distributions -----------------------------------------------------


def excess_volume_samples(graph: PaymentGraph) -> dict[tuple[str, str, str], np.ndarray]:
    """The 18 excess-volume distributions on the rated subgraph.

    For node i and class X: out excess is
    (w_i_out(X) - a[r(i)] b[X]) / (1 - a[r(i)] b[X]); in excess swaps the
    marginals to a[X] b[r(i)]. Keys are (node rating, direction, target
    class); nodes with zero volume in a direction contribute no value there.
    """
    rated = np.isin(graph.rating, RISK_CLASSES)
    sub = graph.subgraph(rated)
    if sub.m == 0:
        raise StatsError("rated subgraph has no edges")
    mix = mixing_matrix(sub, sub.rating, weighted=True)
    cat_index = {c: i for i, c in enumerate(mix.categories)}
    a = np.zeros(3)
    b = np.zeros(3)
    for ci, c in enumerate(RISK_CLASSES):
        if c in cat_index:
            a[ci] = mix.a[cat_index[c]]
            b[ci] = mix.b[cat_index[c]]

    code = np.array([RISK_CLASSES.index(r) for r in sub.rating])
    out_vol = np.zeros((sub.n, 3))
    in_vol = np.zeros((sub.n, 3))
    np.add.at(out_vol, (sub.src, code[sub.dst]), sub.weight)
    np.add.at(in_vol, (sub.dst, code[sub.src]), sub.weight)
    out_tot = out_vol.sum(axis=1)
    in_tot = in_vol.sum(axis=1)

    samples: dict[tuple[str, str, str], np.ndarray] = {}
    for ri, r in enumerate(RISK_CLASSES):
        onodes = (code == ri) & (out_tot > 0)
        inodes = (code == ri) & (in_tot > 0)
        for xi, xcls in enumerate(RISK_CLASSES):
            exp_out = a[ri] * b[xi]
            w = out_vol[onodes, xi] / out_tot[onodes]
            samples[(r, "out", xcls)] = (w - exp_out) / (1.0 - exp_out)
            exp_in = a[xi] * b[ri]
            w = in_vol[inodes, xi] / in_tot[inodes]
            samples[(r, "in", xcls)] = (w - exp_in) / (1.0 - exp_in)
    return samples


# -- Mann-Whitney U ----------------------------------------------------------------


@dataclass(frozen=True)
class MannWhitneyResult:
    U: float
    p: float
    method: str  # "exact" | "normal"


_EXACT_MW_LIMIT = 12


def _midranks(pooled: np.ndarray) -> np.ndarray:
    order = np.argsort(pooled, kind="mergesort")
    ranks = np.empty(len(pooled))
    sorted_vals = pooled[order]
    i = 0
    while i < len(pooled):
        j = i
        while j + 1 < len(pooled) and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def mann_whitney_u(sample_a: Sequence[float], sample_b: Sequence[float],
                   alternative: str = "two_sided") -> MannWhitneyResult:
    """Rank-sum U test; "greater" tests the first sample stochastically greater.

    Exact p by enumeration of group assignments when the pooled size is at
    most 12, else a normal approximation with midrank tie correction and
    continuity correction.
    """
    a = np.asarray(sample_a, dtype=np.float64)
    b = np.asarray(sample_b, dtype=np.float64)
    if len(a) == 0 or len(b) == 0:
        raise StatsError("both samples must be non-empty")
    if alternative not in ("greater", "two_sided"):
        raise StatsError(f"unknown alternative {alternative!r}")
    na, nb = len(a), len(b)
    pooled = np.concatenate([a, b])
    ranks = _midranks(pooled)
    u_obs = float(ranks[:na].sum() - na * (na + 1) / 2.0)
    mu = na * nb / 2.0

    if na + nb <= _EXACT_MW_LIMIT:
        us = np.array([
            ranks[list(idx)].sum() - na * (na + 1) / 2.0
            for idx in itertools.combinations(range(na + nb), na)
        ])
        if alternative == "greater":
            p = float((us >= u_obs - 1e-9).mean())
        else:
            p = float((np.abs(us - mu) >= abs(u_obs - mu) - 1e-9).mean())
        return MannWhitneyResult(u_obs, p, "exact")

    n = na + nb
    _, tie_counts = np.unique(pooled, return_counts=True)
    tie_term = ((tie_counts ** 3 - tie_counts).sum()) / (n * (n - 1))
    var = na * nb / 12.0 * ((n + 1) - tie_term)
    if var <= 0:
        return MannWhitneyResult(u_obs, 1.0, "normal")
    sd = math.sqrt(var)
    if alternative == "greater":
        z = (u_obs - mu - 0.5) / sd
        p = 0.5 * math.erfc(z / math.sqrt(2))
    else:
        z = (abs(u_obs - mu) - 0.5) / sd
        p = min(1.0, math.erfc(z / math.sqrt(2)))
    return MannWhitneyResult(u_obs, p, "normal")
