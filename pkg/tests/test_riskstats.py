import itertools
import math

import numpy as np
import pytest

from conftest import make_graph, random_digraph
from paynet.graph import PaymentGraph
from paynet.metrics import mixing_matrix
from paynet.riskstats import (
    StatsError,
    binary_logit_loglik_grad,
    distance_conditional_ratings,
    excess_volume_samples,
    fit_cumulative_logit,
    hypergeom_tail,
    hypergeom_test,
    mann_whitney_u,
    rating_given_degree,
)

# -- oracles -----------------------------------------------------------------------


def hypergeom_oracle(k, n, K, N, upper):
    """Direct summation over a Pascal-triangle table (exact integers)."""
    C = [[0] * (N + 1) for _ in range(N + 1)]
    for a in range(N + 1):
        C[a][0] = 1
        for b in range(1, a + 1):
            C[a][b] = C[a - 1][b - 1] + C[a - 1][b]
    lo, hi = max(0, n + K - N), min(n, K)
    js = range(max(k, lo), hi + 1) if upper else range(lo, min(k, hi) + 1)
    num = sum(C[K][j] * C[N - K][n - j] for j in js)
    return num / C[N][n]


def mw_enumeration_oracle(a, b, alternative):
    """Enumerate label assignments; U counted by pairwise wins (ties half)."""
    pooled = list(a) + list(b)
    na = len(a)
    idx = range(len(pooled))

    def u_of(a_idx):
        a_vals = [pooled[i] for i in a_idx]
        b_vals = [pooled[i] for i in idx if i not in set(a_idx)]
        return sum(1.0 if x > y else 0.5 if x == y else 0.0 for x in a_vals for y in b_vals)

    u_obs = u_of(tuple(range(na)))
    mu = na * (len(pooled) - na) / 2.0
    us = [u_of(comb) for comb in itertools.combinations(idx, na)]
    if alternative == "greater":
        return u_obs, sum(u >= u_obs - 1e-9 for u in us) / len(us)
    return u_obs, sum(abs(u - mu) >= abs(u_obs - mu) - 1e-9 for u in us) / len(us)


def sample_cumulative_logit(a_L, b_L, a_M, b_M, x, seed):
    """Forward sampler for the two-split ordered model."""
    rng = np.random.default_rng(seed)
    pL = 1.0 / (1.0 + np.exp(-(a_L + b_L * x)))
    pM = 1.0 / (1.0 + np.exp(-(a_M + b_M * x)))
    u = rng.uniform(size=len(x))
    return np.where(u < pL, "L", np.where(u < pM, "M", "H"))


# -- rating given degree ------------------------------------------------------------


class TestRatingGivenDegree:
    def test_all_degree_one_rated_m(self):
        g = make_graph(4, [(0, 1), (2, 3)], rating=["M", "M", "M", "M"])
        table = rating_given_degree(g, "out")
        assert table[1] == (0.0, 1.0, 0.0)

    def test_rows_sum_to_one(self):
        g = random_digraph(60, 0.08, seed=0)
        rng = np.random.default_rng(1)
        g = PaymentGraph(g.node_ids, g.src, g.dst, g.weight,
                         rating=rng.choice(["L", "M", "H", "NA"], size=60))
        for shares in rating_given_degree(g, "in").values():
            assert sum(shares) == pytest.approx(1.0)

    def test_planted_monotone_trend_recovered(self):
        # P(L | degree) rises with degree by construction
        rng = np.random.default_rng(2)
        n = 4000
        star_deg = rng.integers(1, 30, size=n)
        src = np.repeat(np.arange(n), star_deg)
        hub_pool = rng.integers(n, n + 50, size=len(src))
        ids = [f"x{i}" for i in range(n + 50)]
        pL = 1.0 / (1.0 + np.exp(-(star_deg - 15) / 4.0))
        ratings = np.where(rng.uniform(size=n) < pL, "L", "M").tolist() + ["NA"] * 50
        g = PaymentGraph.from_edges(ids, src, hub_pool, np.ones(len(src)), rating=ratings)
        table = rating_given_degree(g, "out")
        low = np.mean([table[k][0] for k in table if k <= 5])
        high = np.mean([table[k][0] for k in table if k >= 25])
        assert high > low + 0.4

    def test_no_rated_nodes_errors(self, three_cycle):
        with pytest.raises(StatsError):
            rating_given_degree(three_cycle)


# -- cumulative logit --------------------------------------------------------------------


class TestCumulativeLogit:
    def test_recovers_planted_coefficients(self):
        rng = np.random.default_rng(3)
        x = rng.uniform(0, 20, size=100_000)
        y = sample_cumulative_logit(-1.0, 0.25, 1.0, 0.35, x, seed=4)
        m = fit_cumulative_logit(x[:, None], y)
        assert m.a_L == pytest.approx(-1.0, abs=0.05)
        assert m.b_L[0] == pytest.approx(0.25, abs=0.05)
        assert m.a_M == pytest.approx(1.0, abs=0.05)
        assert m.b_M[0] == pytest.approx(0.35, abs=0.05)
        assert m.converged and m.ordering_violations == 0

    def test_zero_slope_ci_covers_zero(self):
        rng = np.random.default_rng(5)
        x = rng.uniform(0, 10, size=20_000)
        y = sample_cumulative_logit(-0.5, 0.0, 0.8, 0.0, x, seed=6)
        m = fit_cumulative_logit(x[:, None], y)
        assert abs(m.b_L[0]) <= 2.0 * m.se_L[0]
        assert abs(m.b_M[0]) <= 2.0 * m.se_M[0]

    def test_two_predictors_supported(self):
        rng = np.random.default_rng(7)
        X = rng.uniform(0, 5, size=(30_000, 2))
        z = 0.3 * X[:, 0] + 0.6 * X[:, 1]
        y = sample_cumulative_logit(-1.0, 1.0, 1.0, 1.0, z, seed=8)
        m = fit_cumulative_logit(X, y)
        assert m.b_L.shape == (2,)
        assert m.b_L[1] / m.b_L[0] == pytest.approx(2.0, rel=0.2)

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(9)
        Xb = np.column_stack([np.ones(200), rng.normal(size=(200, 2))])
        z = (rng.uniform(size=200) < 0.4).astype(float)
        beta = rng.normal(size=3) * 0.5
        _, grad = binary_logit_loglik_grad(beta, Xb, z)
        eps = 1e-5
        for j in range(3):
            bp, bm = beta.copy(), beta.copy()
            bp[j] += eps
            bm[j] -= eps
            fd = (binary_logit_loglik_grad(bp, Xb, z)[0] - binary_logit_loglik_grad(bm, Xb, z)[0]) / (2 * eps)
            assert grad[j] == pytest.approx(fd, rel=1e-4)

    def test_perfect_separation_capped_and_flagged(self):
        x = np.concatenate([np.zeros(50), np.ones(50)])
        y = np.array(["L"] * 50 + ["H"] * 50)
        m = fit_cumulative_logit(x[:, None], y)
        assert m.separation_flag
        assert np.all(np.abs(m.b_L) <= 20.0)

    def test_single_rating_errors(self):
        with pytest.raises(StatsError):
            fit_cumulative_logit(np.arange(10.0)[:, None], ["L"] * 10)


# -- distance shells ----------------------------------------------------------------------


class TestDistanceConditional:
    def test_chain_l_m_h(self):
        g = make_graph(3, [(0, 1), (1, 2)], rating=["L", "M", "H"])
        table = distance_conditional_ratings(g, "L", k_max=3)
        assert table[1][:3] == (0.0, 1.0, 0.0)
        assert table[2][:3] == (0.0, 0.0, 1.0)
        assert 3 not in table

    def test_k1_matches_mixing_row(self):
        g = random_digraph(50, 0.1, seed=13)
        rng = np.random.default_rng(14)
        g = PaymentGraph(g.node_ids, g.src, g.dst, g.weight,
                         rating=rng.choice(["L", "M", "H"], size=50))
        table = distance_conditional_ratings(g, "L", k_max=1)
        mix = mixing_matrix(g, g.rating, weighted=False)
        li = mix.categories.index("L")
        # k=1 pairs from L are exactly L's out-edges toward rated nodes, except
        # that parallel shortest paths collapse; compare share structure instead
        row = mix.e[li] / mix.e[li].sum()
        got = np.array(table[1][:3])
        want = np.array([row[mix.categories.index(c)] for c in ("L", "M", "H")])
        assert np.allclose(got, want, atol=0.02)

    def test_homophilous_graph_same_rating_excess_decays(self):
        from paynet.synth import gen_modular_graph

        priors = [(0.8, 0.15, 0.05, 0.0), (0.1, 0.8, 0.1, 0.0), (0.05, 0.15, 0.8, 0.0)]
        g, _, ratings = gen_modular_graph(600, 3, 0.05, 0.003,
                                          per_module_rating_bias=priors, seed=15)
        g = PaymentGraph(g.node_ids, g.src, g.dst, g.weight, rating=ratings)
        table = distance_conditional_ratings(g, "L", k_max=6)
        uncond = float((g.rating == "L").sum()) / (np.isin(g.rating, ["L", "M", "H"])).sum()
        excess1 = table[1][0] - uncond
        excess4 = table[4][0] - uncond
        assert excess1 > 0.1
        assert excess4 < excess1

    def test_shares_sum_to_one(self):
        g = random_digraph(40, 0.08, seed=16)
        rng = np.random.default_rng(17)
        g = PaymentGraph(g.node_ids, g.src, g.dst, g.weight,
                         rating=rng.choice(["L", "M", "H", "NA"], size=40))
        for k, (pl, pm, ph, tot) in distance_conditional_ratings(g, "M", 8).items():
            assert pl + pm + ph == pytest.approx(1.0)
            assert tot > 0


# -- hypergeometric test -------------------------------------------------------------------


class TestHypergeomTest:
    def test_frozen_oracle_example(self):
        res = hypergeom_test(9, 10, 10, 100)
        expected = 901 / math.comb(100, 10)  # 5.2050e-11 by direct summation
        assert res.p_value == pytest.approx(expected, rel=1e-12)
        assert res.direction == "over"

    def test_matches_oracle_sample_small_n(self):
        rng = np.random.default_rng(18)
        for _ in range(200):
            N = int(rng.integers(2, 61))
            K = int(rng.integers(0, N + 1))
            n = int(rng.integers(1, N + 1))
            lo, hi = max(0, n + K - N), min(n, K)
            k = int(rng.integers(lo, hi + 1))
            upper = k * N > K * n
            p = hypergeom_tail(k, n, K, N, upper=upper)
            want = hypergeom_oracle(k, n, K, N, upper)
            assert p == pytest.approx(want, rel=1e-12, abs=0.0)

    def test_large_population_log_path(self):
        p = hypergeom_tail(60, 100, 300, 2000, upper=True)
        from scipy.stats import hypergeom as sp_h

        assert p == pytest.approx(float(sp_h.sf(59, 2000, 300, 100)), rel=1e-9)

    def test_direction_tie_goes_under_with_flag(self):
        res = hypergeom_test(5, 10, 50, 100)
        assert res.direction == "under" and res.tie
        assert not res.significant

    def test_bonferroni_threshold(self):
        res = hypergeom_test(9, 10, 10, 100, n_tests=57, p_s=0.01)
        assert res.threshold == pytest.approx(0.01 / 57)
        assert res.threshold == pytest.approx(1.754e-4, rel=1e-3)
        assert res.significant

    def test_invalid_counts_error(self):
        with pytest.raises(StatsError):
            hypergeom_test(5, 4, 10, 100)
        with pytest.raises(StatsError):
            hypergeom_test(1, 10, 5, 4)


# -- excess volume -------------------------------------------------------------------------


class TestExcessVolume:
    def test_full_concentration_delta_one(self):
        # node 0 (L) sends everything to M; planted marginals make a*b = 0.4
        g = make_graph(4, [(0, 1), (2, 3), (3, 2)],
                       weights=[4.0, 3.0, 3.0],
                       rating=["L", "M", "M", "M"])
        samples = excess_volume_samples(g)
        d = samples[("L", "out", "M")]
        assert len(d) == 1
        assert d[0] == pytest.approx(1.0)

    def test_matching_expectation_delta_zero(self):
        # single category of senders whose split equals the global split
        g = make_graph(3, [(0, 1), (0, 2)], weights=[3.0, 7.0], rating=["L", "L", "M"])
        samples = excess_volume_samples(g)
        # node 0 sends 30% to L... global b_L = 0.3: delta = 0
        assert samples[("L", "out", "L")][0] == pytest.approx(0.0, abs=1e-12)
        assert samples[("L", "out", "M")][0] == pytest.approx(0.0, abs=1e-12)

    def test_four_node_toy_matches_hand_enumeration(self):
        g = make_graph(4, [(0, 1), (1, 0), (2, 0), (0, 3), (2, 3)],
                       weights=[2.0, 1.0, 3.0, 4.0, 5.0],
                       rating=["L", "M", "H", "L"])
        samples = excess_volume_samples(g)
        total = 15.0
        # volume from L = 6 (node 0), M = 1, H = 8; volume to L = 13, M = 2, H = 0
        a = {"L": 6.0 / total, "M": 1.0 / total, "H": 8.0 / total}
        b = {"L": 13.0 / total, "M": 2.0 / total, "H": 0.0}
        # node 0 (L): out volume 6 -> M:2, L(3):4
        w0m = 2.0 / 6.0
        want = (w0m - a["L"] * b["M"]) / (1 - a["L"] * b["M"])
        assert samples[("L", "out", "M")][0] == pytest.approx(want)
        w0l = 4.0 / 6.0
        want_l = (w0l - a["L"] * b["L"]) / (1 - a["L"] * b["L"])
        got_l = samples[("L", "out", "L")]
        assert len(got_l) == 1  # node 3 has no out volume, contributes nothing
        assert got_l[0] == pytest.approx(want_l)
        # node 3 (L) receives 4 from L and 5 from H
        w3l = 4.0 / 9.0
        want_in = (w3l - a["L"] * b["L"]) / (1 - a["L"] * b["L"])
        assert want_in in [pytest.approx(v) for v in samples[("L", "in", "L")].tolist()]

    def test_eighteen_sample_sets(self):
        g = random_digraph(60, 0.1, seed=19, weights=True)
        rng = np.random.default_rng(20)
        g = PaymentGraph(g.node_ids, g.src, g.dst, g.weight,
                         rating=rng.choice(["L", "M", "H"], size=60))
        samples = excess_volume_samples(g)
        assert len(samples) == 18
        for v in samples.values():
            assert np.all(v <= 1.0 + 1e-12)

    def test_zero_out_volume_node_excluded(self):
        g = make_graph(3, [(0, 1), (0, 2)], weights=[1.0, 1.0], rating=["L", "M", "H"])
        samples = excess_volume_samples(g)
        assert len(samples[("M", "out", "L")]) == 0


# -- Mann-Whitney -------------------------------------------------------------------------


class TestMannWhitney:
    def test_spec_example_one_sided(self):
        res = mann_whitney_u([3, 4], [1, 2], "greater")
        assert res.U == 4.0
        assert res.p == pytest.approx(1.0 / 6.0)
        assert res.method == "exact"

    def test_identical_samples_two_sided(self):
        res = mann_whitney_u([1.0, 2.0, 3.0], [1.0, 2.0, 3.0], "two_sided")
        assert res.p >= 0.9

    def test_exact_matches_enumeration_oracle(self):
        rng = np.random.default_rng(21)
        for _ in range(40):
            na, nb = int(rng.integers(1, 6)), int(rng.integers(1, 6))
            a = rng.integers(0, 6, size=na).astype(float)
            b = rng.integers(0, 6, size=nb).astype(float)
            for alt in ("greater", "two_sided"):
                res = mann_whitney_u(a, b, alt)
                u_want, p_want = mw_enumeration_oracle(a, b, alt)
                assert res.U == pytest.approx(u_want)
                assert res.p == pytest.approx(p_want)

    def test_shifted_normals_significant(self):
        rng = np.random.default_rng(22)
        a = rng.normal(1.0, 1.0, size=200)
        b = rng.normal(0.0, 1.0, size=200)
        res = mann_whitney_u(a, b, "greater")
        assert res.p < 1e-4
        assert res.method == "normal"

    def test_empty_sample_errors(self):
        with pytest.raises(StatsError):
            mann_whitney_u([], [1.0])

    def test_normal_approx_close_to_exact_at_boundary(self):
        rng = np.random.default_rng(23)
        a = rng.normal(0.4, 1, size=6)
        b = rng.normal(0.0, 1, size=6)
        exact = mann_whitney_u(a, b, "two_sided")
        big_a = np.tile(a, 8) + rng.normal(0, 1e-6, 48)
        big_b = np.tile(b, 8) + rng.normal(0, 1e-6, 48)
        approx = mann_whitney_u(big_a, big_b, "two_sided")
        assert approx.method == "normal" and exact.method == "exact"
