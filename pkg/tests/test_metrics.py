import math
from functools import lru_cache

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cascadelab import (NETWORK_IDENTITY, Cascade, CascadeSizeRegressor,
                        MetricContext, SimulationConfig, compute_metrics,
                        dtw_distance, early_adopter_features, lee_l,
                        log_ratio_error, propensity_kl, relative_error)
from cascadelab.metrics import (MetricError, RegionMap, downsample_cascade,
                                histogram_kl, rebin_counts, row_standardize,
                                standardize_features, truncate_tail)
from cascadelab.rng import make_rng
from cascadelab.worldio import plant_cascade


# -- independent oracles -----------------------------------------------------

def dtw_by_path_enumeration(a, b):
    """All monotone warping paths, minimum total |a_i - b_j| cost."""
    @lru_cache(maxsize=None)
    def go(i, j):
        cost = abs(a[i] - b[j])
        if i == 0 and j == 0:
            return cost
        prev = []
        if i > 0:
            prev.append(go(i - 1, j))
        if j > 0:
            prev.append(go(i, j - 1))
        if i > 0 and j > 0:
            prev.append(go(i - 1, j - 1))
        return cost + min(prev)
    return go(len(a) - 1, len(b) - 1)


def lee_l_direct(x, y, w):
    """Spreadsheet-style evaluation of the published formula."""
    x, y, w = map(np.asarray, (x, y, w))
    n = len(x)
    xm, ym = x.mean(), y.mean()
    num = 0.0
    for i in range(n):
        sx = sum(w[i, j] * (x[j] - xm) for j in range(n))
        sy = sum(w[i, j] * (y[j] - ym) for j in range(n))
        num += sx * sy
    denom = math.sqrt(sum((v - xm) ** 2 for v in x)) * math.sqrt(
        sum((v - ym) ** 2 for v in y))
    scale = n / sum(sum(w[i]) ** 2 for i in range(n))
    return scale * num / denom


class TestLogRatioError:
    def test_half_and_double_have_equal_magnitude(self):
        lo = log_ratio_error(5000, 1000, 0.1)
        hi = log_ratio_error(20000, 1000, 0.1)
        assert abs(lo - math.log10(2)) < 1e-9
        assert abs(hi - math.log10(2)) < 1e-9

    def test_exact_expectation(self):
        assert log_ratio_error(10000, 1000, 0.1) == 0.0

    def test_zero_counts_rejected(self):
        with pytest.raises(MetricError):
            log_ratio_error(0, 10)
        with pytest.raises(MetricError):
            log_ratio_error(10, 0)


class TestRelativeError:
    def test_basic(self):
        assert abs(relative_error(3.3, 3.0) - 0.1) < 1e-9

    def test_identity(self):
        assert relative_error(7.7, 7.7) == 0.0

    def test_total_miss(self):
        assert relative_error(0.0, 2.0) == 1.0

    def test_zero_reference_rejected(self):
        with pytest.raises(MetricError):
            relative_error(1.0, 0.0)


class TestDtw:
    def test_identical_sequences(self):
        assert dtw_distance([1, 2, 3], [1, 2, 3]) == 0.0

    def test_constant_offset(self):
        assert dtw_distance([0, 0], [1, 1]) == 2.0

    def test_alignment_absorbs_insertion(self):
        assert dtw_distance([0, 1], [0, 0, 1]) == 0.0

    def test_empty_rejected(self):
        with pytest.raises(MetricError):
            dtw_distance([], [1.0])

    @given(st.lists(st.integers(0, 5), min_size=1, max_size=5),
           st.lists(st.integers(0, 5), min_size=1, max_size=5))
    @settings(max_examples=60, deadline=None)
    def test_matches_path_enumeration(self, a, b):
        assert abs(dtw_distance(a, b) - dtw_by_path_enumeration(tuple(a), tuple(b))) < 1e-9

    @given(st.lists(st.floats(0, 10, allow_nan=False), min_size=1, max_size=6),
           st.lists(st.floats(0, 10, allow_nan=False), min_size=1, max_size=6))
    @settings(max_examples=40, deadline=None)
    def test_symmetry(self, a, b):
        assert dtw_distance(a, b) == dtw_distance(b, a)


class TestPropensityKl:
    def test_identical_feature_multisets(self):
        rng = make_rng(0)
        rows = rng.normal(size=(40, 3))
        assert propensity_kl(rows, rows.copy()) <= 1e-3

    def test_separable_sides_diverge(self):
        emp = np.full((30, 2), -3.0) + make_rng(1).normal(scale=0.1, size=(30, 2))
        sim = np.full((30, 2), 3.0) + make_rng(2).normal(scale=0.1, size=(30, 2))
        assert propensity_kl(emp, sim) > 1.0

    def test_matches_histogram_oracle(self):
        rng = make_rng(5)
        emp = rng.normal(size=(60, 2))
        sim = rng.normal(loc=0.4, size=(60, 2))
        from sklearn.linear_model import LogisticRegression
        x = np.vstack([emp, sim])
        y = np.concatenate([np.zeros(60), np.ones(60)])
        model = LogisticRegression(C=1.0, max_iter=1000).fit(x, y)
        scores = model.predict_proba(x)[:, 1]
        # independent recomputation from the fixed fitted scores
        bins, smooth = 20, 1e-6
        edges = [k / bins for k in range(bins + 1)]
        p = [smooth] * bins
        q = [smooth] * bins
        for s, lab in zip(scores, y):
            k = min(int(s * bins), bins - 1)
            if lab == 0:
                p[k] += 1
            else:
                q[k] += 1
        ps, qs = sum(p), sum(q)
        expected = sum((pi / ps) * math.log((pi / ps) / (qi / qs))
                       for pi, qi in zip(p, q))
        got = histogram_kl(scores[y == 0], scores[y == 1], bins, smooth)
        assert abs(got - expected) < 1e-9
        assert abs(propensity_kl(emp, sim) - expected) < 1e-9

    def test_too_few_rows(self):
        with pytest.raises(MetricError):
            propensity_kl(np.zeros((1, 2)), np.zeros((5, 2)))


class TestLeeL:
    def test_self_with_identity_weights_is_one(self):
        x = np.array([1.0, 2.0, 5.0, 3.0])
        assert abs(lee_l(x, x, np.eye(4)) - 1.0) < 1e-12

    def test_negated_is_minus_one(self):
        x = np.array([1.0, -1.0, 2.0, -2.0])
        assert abs(lee_l(x, -x, np.eye(4)) - (-1.0)) < 1e-12

    def test_rook_grid_matches_direct_formula(self):
        # 2x2 grid, rook adjacency, row-standardized
        w = np.array([[0, 1, 1, 0], [1, 0, 0, 1], [1, 0, 0, 1], [0, 1, 1, 0]],
                     dtype=float)
        w = row_standardize(w)
        x = np.array([0.3, 0.9, 0.1, 0.7])
        y = np.array([0.2, 0.8, 0.4, 0.5])
        assert abs(lee_l(x, y, w) - lee_l_direct(x, y, w)) < 1e-12

    def test_zero_variance_rejected(self):
        with pytest.raises(MetricError):
            lee_l([1, 1, 1], [1, 2, 3], np.eye(3))

    def test_bounded(self):
        rng = make_rng(9)
        for _ in range(20):
            x, y = rng.normal(size=8), rng.normal(size=8)
            w = row_standardize(rng.random((8, 8)))
            assert -1.0 - 1e-9 <= lee_l(x, y, w) <= 1.0 + 1e-9


class TestCascadePrep:
    def test_downsample_leaves_smaller_untouched(self):
        c = Cascade([0, 1, 2], [0, 1, 2], [0])
        assert downsample_cascade(c, 5, make_rng(0)) is c

    def test_downsample_size_and_determinism(self):
        c = Cascade(np.arange(50), np.arange(50), [0])
        a = downsample_cascade(c, 20, make_rng(7))
        b = downsample_cascade(c, 20, make_rng(7))
        assert a.n_events == 20 and a == b
        assert (np.diff(a.times) >= 0).all()

    def test_truncate_tail_applies_stop_rule(self):
        counts = np.concatenate([np.ones(30, dtype=int), np.zeros(40, dtype=int)])
        cut = truncate_tail(counts, warmup=10, window=5, growth=0.01)
        assert len(cut) == 35  # growth over (30,35] is zero; halt at t=34
        assert truncate_tail(np.ones(20, dtype=int), warmup=50).shape == (20,)

    def test_rebin_preserves_mass(self):
        counts = np.arange(10, dtype=float)
        out = rebin_counts(counts, 4)
        assert out.sum() == counts.sum()
        assert len(out) == 4

    def test_standardize_features_zero_variance_passthrough(self):
        a = np.array([[1.0, 2.0], [1.0, 4.0]])
        b = np.array([[1.0, 6.0]])
        sa, sb = standardize_features(a, b)
        assert np.allclose(sa[:, 0], 0.0) and np.allclose(sb[:, 0], 0.0)


def region_identity_map(n_nodes, n_regions=4):
    return RegionMap(np.arange(n_nodes) % n_regions,
                     [f"r{i}" for i in range(n_regions)], np.eye(n_regions))


def base_cfg():
    return SimulationConfig(decay=0.9, novelty_cap=20, max_steps=300,
                            variant=NETWORK_IDENTITY)


@pytest.fixture(scope="module")
def planted(small_world):
    seeds = [small_world.net.node_ids[i] for i in (3, 33, 133, 233, 333)]
    return plant_cascade(small_world, "mx", seeds, NETWORK_IDENTITY, 0.5,
                         base_cfg(), rng_seed=17)


class TestComputeMetrics:
    def test_self_comparison(self, small_world, planted):
        # identity-weight region map: regional similarity of x with itself is
        # exactly the Pearson correlation, i.e. 1
        ctx = MetricContext(net=small_world.net, ids=small_world.ids,
                            regions=region_identity_map(small_world.net.n_nodes),
                            spec=planted.spec, rng_seed=4)
        mv = compute_metrics(planted.cascade, planted.cascade, ctx)
        for k in (0, 1, 2, 3, 4, 5):
            assert mv.valid[k] and abs(mv.values[k]) < 1e-9
        assert abs(mv.m9 - 1.0) < 1e-9
        assert mv.m8 <= 1e-3 and mv.m10 <= 1e-3
        assert not mv.valid[6]  # no corpus regressor in context

    def test_tenfold_usage_same_adopters(self, small_world, planted):
        # two heavy users, so any event sample keeps the full adopter set
        a, b = 3, 33
        emp = Cascade([a, b] * 50, np.repeat(np.arange(50), 2), [a])
        sim = Cascade(np.repeat(emp.agents, 10), np.repeat(emp.times, 10), emp.seeds)
        from cascadelab import HashtagSpec
        spec = HashtagSpec(tag="x10", seeds=[small_world.net.node_ids[a]],
                           empirical_size=emp.n_events, sample_rate=0.1)
        ctx = MetricContext(net=small_world.net, ids=small_world.ids,
                            regions=region_identity_map(small_world.net.n_nodes),
                            spec=spec, rng_seed=9)
        mv = compute_metrics(sim, emp, ctx)
        assert abs(mv.m1) < 1e-9
        assert abs(mv.m2) < 1e-9  # downsampling recovers the adopter set

    def test_deterministic_under_seed(self, small_world, planted):
        other = plant_cascade(small_world, "mx2", planted.spec.seeds,
                              NETWORK_IDENTITY, 0.4, base_cfg(), rng_seed=5)
        ctx = lambda: MetricContext(
            net=small_world.net, ids=small_world.ids,
            regions=region_identity_map(small_world.net.n_nodes),
            spec=planted.spec, rng_seed=21)
        a = compute_metrics(other.cascade, planted.cascade, ctx())
        b = compute_metrics(other.cascade, planted.cascade, ctx())
        assert np.array_equal(a.values[a.valid], b.values[b.valid])
        assert np.array_equal(a.valid, b.valid)

    def test_region_shift_lowers_geographic_similarity(self, small_world):
        # empirical adopters drawn from region 0, simulated shifted to region 3
        regions = RegionMap(np.arange(400) % 4, ["a", "b", "c", "d"],
                            np.array([[0, 1, 0, 1], [1, 0, 1, 0],
                                      [0, 1, 0, 1], [1, 0, 1, 0]], dtype=float))
        nodes_r0 = np.flatnonzero(regions.region_of_node == 0)[:40]
        nodes_r3 = np.flatnonzero(regions.region_of_node == 3)[:40]
        seeds = [small_world.net.node_ids[i] for i in nodes_r0[:3]]
        emp = Cascade(nodes_r0, np.arange(40) // 4, nodes_r0[:3])
        same = Cascade(nodes_r0, np.arange(40) // 4, nodes_r0[:3])
        shifted = Cascade(np.concatenate([nodes_r0[:3], nodes_r3[3:]]),
                          np.arange(40) // 4, nodes_r0[:3])
        from cascadelab import HashtagSpec
        spec = HashtagSpec(tag="geo", seeds=seeds, empirical_size=40)
        make_ctx = lambda: MetricContext(net=small_world.net, ids=small_world.ids,
                                         regions=regions, spec=spec, rng_seed=2)
        m_same = compute_metrics(same, emp, make_ctx())
        m_shift = compute_metrics(shifted, emp, make_ctx())
        assert m_shift.m9 < m_same.m9

        # direction agrees with a brute-force evaluation on raw counts
        def frac(c):
            cnt = np.bincount(regions.region_of_node[c.adopters()], minlength=4)
            return (cnt + 0.5) / (regions.populations() + 1.0)
        w = row_standardize(regions.weights)
        assert (lee_l_direct(frac(shifted), frac(emp), w)
                < lee_l_direct(frac(same), frac(emp), w))

    def test_never_aborts_with_tiny_cascades(self, small_world, planted):
        sim = Cascade([0, 0], [0, 1], [0])  # one adopter, two uses
        ctx = MetricContext(net=small_world.net, ids=small_world.ids,
                            regions=region_identity_map(small_world.net.n_nodes),
                            spec=planted.spec, rng_seed=0)
        mv = compute_metrics(sim, planted.cascade, ctx)
        assert not mv.valid[5]  # edge density needs two adopters
        assert not mv.valid[7] and not mv.valid[9]  # KL needs two rows per side
        assert np.isfinite(mv.values[mv.valid]).all()


class TestSizeRegressor:
    def test_recovers_closed_form_rule(self, small_world):
        # ground truth: final size = 50 + 3 * (sum of first-adopter degrees)
        net, ids = small_world.net, small_world.ids
        rng = make_rng(31)
        feats, sizes = [], []
        for _ in range(240):
            adopters = rng.choice(net.n_nodes, size=30, replace=False)
            times = np.sort(rng.integers(0, 40, size=30))
            c = Cascade(adopters, times, adopters[:3])
            feats.append(early_adopter_features(c, net, ids))
            sizes.append(50.0 + 3.0 * net.degree[adopters].sum())
        feats = np.array(feats)
        sizes = np.array(sizes)
        reg = CascadeSizeRegressor(model="mlp", rng_seed=0).fit(feats[:200], sizes[:200])
        pred = reg.predict(feats[200:])
        rel = np.abs(pred - sizes[200:]) / sizes[200:]
        assert rel.mean() < 0.15

    def test_ridge_fallback_deterministic(self, small_world):
        net, ids = small_world.net, small_world.ids
        rng = make_rng(8)
        feats = [early_adopter_features(
            Cascade(a := rng.choice(net.n_nodes, 20, replace=False),
                    np.sort(rng.integers(0, 30, 20)), a[:2]), net, ids)
            for _ in range(30)]
        sizes = rng.integers(50, 500, size=30).astype(float)
        r1 = CascadeSizeRegressor(model="ridge").fit(feats, sizes)
        r2 = CascadeSizeRegressor(model="ridge").fit(feats, sizes)
        assert np.array_equal(r1.predict(feats), r2.predict(feats))

    def test_unfitted_predict_rejected(self):
        with pytest.raises(MetricError):
            CascadeSizeRegressor().predict(np.zeros((1, 4)))


class TestM7InVector:
    def test_perfect_regressor_gives_zero(self, small_world, planted):
        class Oracle:
            def predict(self, rows):
                return np.full(len(np.atleast_2d(rows)), planted.cascade.n_events,
                               dtype=float)
        ctx = MetricContext(net=small_world.net, ids=small_world.ids,
                            regions=region_identity_map(small_world.net.n_nodes),
                            spec=planted.spec, rng_seed=3, size_regressor=Oracle())
        mv = compute_metrics(planted.cascade, planted.cascade, ctx)
        assert mv.valid[6] and mv.m7 == 0.0
