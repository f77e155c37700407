import numpy as np
import pytest

from conftest import make_graph, random_digraph
from paynet.graph import PaymentGraph
from paynet.metrics import (
    Assortativity,
    FitError,
    MixingMatrix,
    assortativity,
    ccdf,
    degree_class_assortativity,
    log_bin_labels,
    mixing_matrix,
    powerlaw_fit,
    size_proxy_tertiles,
)


# -- oracles ----------------------------------------------------------------------


def pareto_samples(alpha, xmin, n, seed):
    """Inverse-CDF sampler: CCDF (x/xmin)^-(alpha-1)."""
    u = np.random.default_rng(seed).uniform(size=n)
    return xmin * u ** (-1.0 / (alpha - 1.0))


def mixing_oracle(g, labels, weighted):
    cats = sorted(set(labels))
    idx = {c: i for i, c in enumerate(cats)}
    e = np.zeros((len(cats), len(cats)))
    for s, d, w in zip(g.src, g.dst, g.weight):
        e[idx[labels[s]], idx[labels[d]]] += w if weighted else 1.0
    return e / e.sum(), cats


class TestCcdf:
    def test_direct_count(self):
        pts = ccdf([1, 2, 2, 4])
        assert pts.tolist() == [[1.0, 1.0], [2.0, 0.75], [4.0, 0.25]]

    def test_constant_sample(self):
        assert ccdf([3.0, 3.0]).tolist() == [[3.0, 1.0]]

    def test_monotone_nonincreasing(self):
        pts = ccdf(np.random.default_rng(0).uniform(1, 9, size=500))
        assert np.all(np.diff(pts[:, 1]) <= 0)
        assert pts[0, 1] == 1.0

    def test_planted_pareto_loglog_slope(self):
        x = pareto_samples(2.5, 1.0, 200_000, seed=1)
        pts = ccdf(x)
        sel = (pts[:, 0] > 2) & (pts[:, 1] > 1e-4)
        slope = np.polyfit(np.log(pts[sel, 0]), np.log(pts[sel, 1]), 1)[0]
        assert slope == pytest.approx(-1.5, abs=0.1)


class TestPowerlawFit:
    def test_continuous_recovery(self):
        x = pareto_samples(2.0, 1.0, 100_000, seed=2)
        fit = powerlaw_fit(x, discrete=False)
        assert 1.95 <= fit.alpha <= 2.05
        assert not fit.discrete

    def test_discrete_recovery_paper_target(self):
        from scipy.stats import zipf

        x = zipf.rvs(2.55, size=100_000, random_state=np.random.default_rng(3))
        fit = powerlaw_fit(x, discrete=True)
        assert 2.45 <= fit.alpha <= 2.65
        assert isinstance(fit.xmin, int)

    def test_all_equal_fails(self):
        with pytest.raises(FitError):
            powerlaw_fit(np.full(500, 7.0), discrete=False)

    def test_too_few_samples_fails(self):
        with pytest.raises(FitError, match="at least"):
            powerlaw_fit(np.arange(1, 20, dtype=float), discrete=False)

    def test_error_shrinks_with_sample_size(self):
        errs = []
        for n in (1_000, 100_000):
            x = pareto_samples(2.4, 1.0, n, seed=5)
            errs.append(abs(powerlaw_fit(x, discrete=False).alpha - 2.4))
        assert errs[1] < errs[0]

    def test_exact_scan_matches_or_beats_subsampled_ks(self):
        x = pareto_samples(2.2, 1.0, 3_000, seed=8)
        full = powerlaw_fit(x, discrete=False, exact_scan=True)
        sub = powerlaw_fit(x, discrete=False, max_candidates=200)
        assert full.ks <= sub.ks + 1e-12


class TestMixingMatrix:
    def test_all_within_category_is_diagonal(self):
        g = make_graph(4, [(0, 1), (1, 0), (2, 3), (3, 2)])
        mix = mixing_matrix(g, ["a", "a", "b", "b"])
        assert np.allclose(mix.e, np.diag([0.5, 0.5]))

    def test_weighted_fractions(self):
        g = make_graph(2, [(0, 1), (1, 0)], weights=[5.0, 15.0], rating=["L", "M"])
        mix = mixing_matrix(g, g.rating, weighted=True)
        li, mi = mix.categories.index("L"), mix.categories.index("M")
        assert mix.e[li, mi] == pytest.approx(0.25)
        assert mix.e[mi, li] == pytest.approx(0.75)

    def test_matches_enumeration_oracle(self):
        g = random_digraph(30, 0.15, seed=12, weights=True)
        labels = np.random.default_rng(3).choice(["x", "y", "z"], size=30).tolist()
        for weighted in (False, True):
            mix = mixing_matrix(g, labels, weighted=weighted)
            e, cats = mixing_oracle(g, labels, weighted)
            assert tuple(cats) == mix.categories
            assert np.allclose(mix.e, e)

    def test_marginals(self):
        g = random_digraph(25, 0.2, seed=1)
        mix = mixing_matrix(g, np.random.default_rng(0).choice(["a", "b"], size=25))
        assert mix.e.sum() == pytest.approx(1.0)
        assert np.allclose(mix.a, mix.e.sum(axis=1))
        assert np.allclose(mix.b, mix.e.sum(axis=0))


class TestAssortativity:
    def test_perfect_mixing(self):
        mix = MixingMatrix(np.diag([0.3, 0.7]), ("a", "b"))
        assert assortativity(mix).r == pytest.approx(1.0)

    def test_antidiagonal_reaches_r_min(self):
        mix = MixingMatrix(np.array([[0.0, 0.5], [0.5, 0.0]]), ("a", "b"))
        res = assortativity(mix)
        assert res.r == pytest.approx(-1.0)
        assert res.r == pytest.approx(res.r_min)

    def test_product_mixing_zero(self):
        a = np.array([0.2, 0.5, 0.3])
        b = np.array([0.4, 0.4, 0.2])
        mix = MixingMatrix(np.outer(a, b), ("x", "y", "z"))
        assert assortativity(mix).r == pytest.approx(0.0, abs=1e-12)

    def test_single_category_undefined(self):
        mix = MixingMatrix(np.array([[1.0]]), ("only",))
        with pytest.raises(FitError):
            assortativity(mix)

    def test_relabeling_invariance(self):
        g = random_digraph(40, 0.1, seed=7)
        labels = np.random.default_rng(1).choice(["a", "b", "c"], size=40)
        r1 = assortativity(mixing_matrix(g, labels)).r
        swap = {"a": "c", "b": "a", "c": "b"}
        r2 = assortativity(mixing_matrix(g, [swap[l] for l in labels])).r
        assert r1 == pytest.approx(r2)

    def test_weight_scaling_invariance(self):
        g = random_digraph(40, 0.1, seed=8, weights=True)
        labels = np.random.default_rng(2).choice(["a", "b"], size=40)
        r1 = assortativity(mixing_matrix(g, labels, weighted=True)).r
        scaled = PaymentGraph(g.node_ids, g.src, g.dst, g.weight * 1000.0, rating=g.rating)
        r2 = assortativity(mixing_matrix(scaled, labels, weighted=True)).r
        assert r1 == pytest.approx(r2, rel=1e-9)


class TestDegreeClassAssortativity:
    def test_hub_and_spoke_disassortative(self):
        edges = [(i, 0) for i in range(1, 12)] + [(0, i) for i in range(12, 22)]
        g = make_graph(22, edges)
        assert degree_class_assortativity(g, "degree") < 0

    def test_regular_graph_single_class_errors(self, three_cycle):
        with pytest.raises(FitError):
            degree_class_assortativity(three_cycle, "degree")

    def test_planted_assortative_blocks(self):
        # high-degree block interlinked, low-degree fringe pendant per hub
        rng = np.random.default_rng(9)
        hub_edges = set()
        while len(hub_edges) < 160:
            a, b = rng.integers(0, 20, size=2)
            if a != b:
                hub_edges.add((int(a), int(b)))
        fringe = [(20 + i, i % 20) for i in range(40)]
        g = make_graph(60, sorted(hub_edges) + fringe)
        assert degree_class_assortativity(g, "degree") > 0

    def test_log_bins(self):
        assert log_bin_labels([1, 2, 3, 4, 7, 8]).tolist() == [0, 1, 1, 2, 2, 3]
        assert log_bin_labels([0.0, 5.0]).tolist()[0] == -1


class TestSizeTertiles:
    def test_nine_node_even_split(self):
        # out-strengths 1..9 toward a sink kept out of the ranking via weights
        edges = [(i, (i + 1) % 9) for i in range(9)]
        w = np.arange(1.0, 10.0)
        g = make_graph(9, edges, weights=w)
        t = size_proxy_tertiles(g)
        assert sorted(np.bincount(t)[1:].tolist()) == [3, 3, 3]

    def test_all_equal_goes_low(self, three_cycle):
        assert size_proxy_tertiles(three_cycle).tolist() == [1, 1, 1]

    def test_lognormal_near_even(self):
        rng = np.random.default_rng(10)
        n = 99
        src = np.arange(1, n)
        g = PaymentGraph([str(i) for i in range(n)], src, np.zeros(n - 1, dtype=np.int64),
                         np.exp(rng.normal(0, 1, size=n - 1)))
        t = size_proxy_tertiles(g)
        counts = np.bincount(t)[1:]
        assert np.all(np.abs(counts - n // 3) <= 1)
