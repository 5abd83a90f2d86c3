import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cascadelab import (CategorySchema, HashtagSpec, IdentityMatrix,
                        delta_agent_hashtag, delta_edge, hashtag_affinity,
                        infer_hashtag_identity, seed_similarity)
from cascadelab.identity import (IdentityError, edge_affinity,
                                 edge_affinity_paper_literal, load_identity_csv,
                                 save_identity_csv)
from conftest import make_net, one_dim_identity


def spec_for(dims, values, tag="t", seeds=("s0",)):
    return HashtagSpec(tag=tag, seeds=list(seeds), relevant_dims=np.array(dims),
                       hashtag_identity=np.array(values, dtype=float),
                       empirical_size=1)


class TestSchema:
    def test_duplicate_register_rejected(self):
        with pytest.raises(IdentityError):
            CategorySchema([("a", ["x", "y"]), ("b", ["x"])])

    def test_category_dims(self):
        s = CategorySchema([("a", ["x", "y"]), ("b", ["z"])])
        assert s.dimension == 3
        assert list(s.category_dims("b")) == [2]

    def test_csv_roundtrip(self, tmp_path):
        s = CategorySchema([("a", ["x", "y"]), ("b", ["z"])])
        s.save(tmp_path / "schema.csv")
        assert CategorySchema.load(tmp_path / "schema.csv") == s


class TestIdentityMatrix:
    def test_range_validation(self):
        schema = CategorySchema([("a", ["x"])])
        with pytest.raises(IdentityError):
            IdentityMatrix(np.array([[1.5]]), schema)

    def test_csv_roundtrip(self, tmp_path, small_world):
        path = tmp_path / "ids.csv"
        node_ids = small_world.net.node_ids
        save_identity_csv(small_world.ids, node_ids, path)
        again = load_identity_csv(path, small_world.ids.schema, node_ids)
        assert np.array_equal(again.values, small_world.ids.values)


class TestInferHashtagIdentity:
    def test_extreme_seeds_enter_relevant_set(self):
        # population concentrated low, 75th percentile well under 0.9
        vals = np.concatenate([np.linspace(0, 0.6, 96), [0.9, 0.9, 0.9, 0.9]])
        ids = one_dim_identity(vals)
        dims, uh = infer_hashtag_identity(ids, [96, 97, 98, 99])
        assert list(dims) == [0]
        assert uh[0] == 0.9

    def test_median_below_quantile_excluded(self):
        vals = np.linspace(0, 1, 100)  # 75th percentile ~0.7425
        ids = one_dim_identity(vals)
        dims, _ = infer_hashtag_identity(ids, [40, 50, 60])  # median 0.505
        assert len(dims) == 0

    def test_seed_order_invariant(self, small_world):
        seeds = [3, 77, 150, 260, 390]
        d1, u1 = infer_hashtag_identity(small_world.ids, seeds)
        d2, u2 = infer_hashtag_identity(small_world.ids, seeds[::-1])
        assert np.array_equal(d1, d2) and np.array_equal(u1, u2)

    def test_empty_seed_list_is_error(self, small_world):
        with pytest.raises(IdentityError):
            infer_hashtag_identity(small_world.ids, [])


class TestHashtagAffinity:
    def test_identical_and_most_similar_gets_one(self):
        ids = one_dim_identity([0.8, 0.3])
        d = hashtag_affinity(ids, spec_for([0], [0.8]))
        assert d[0] == 1.0

    def test_empty_relevant_dims_gives_all_ones(self):
        ids = one_dim_identity([0.2, 0.9])
        d = hashtag_affinity(ids, spec_for([], []))
        assert (d == 1.0).all()

    def test_two_agent_hand_value(self):
        # distances 0 and 0.5 on one dimension: second agent scores 0.5
        ids = one_dim_identity([0.8, 0.3])
        spec = spec_for([0], [0.8])
        assert delta_agent_hashtag(ids, 0, spec) == 1.0
        assert abs(delta_agent_hashtag(ids, 1, spec) - 0.5) < 1e-9

    def test_monotone_in_distance(self):
        ids = one_dim_identity([0.8, 0.7, 0.5, 0.2])
        d = hashtag_affinity(ids, spec_for([0], [0.8]))
        assert d[0] > d[1] > d[2] > d[3] > 0

    def test_dimension_permutation_invariant(self):
        schema = CategorySchema([("c", ["r0", "r1", "r2"])])
        vals = np.array([[0.1, 0.5, 0.9], [0.9, 0.2, 0.4], [0.3, 0.3, 0.3]])
        ids = IdentityMatrix(vals, schema)
        a = hashtag_affinity(ids, spec_for([0, 1, 2], [0.2, 0.4, 0.8]))
        b = hashtag_affinity(ids, spec_for([2, 0, 1], [0.8, 0.2, 0.4]))
        assert np.allclose(a, b, atol=1e-12)

    def test_paper_literal_mode(self):
        ids = one_dim_identity([0.6, 0.3])
        d = hashtag_affinity(ids, spec_for([0], [0.8]), paper_literal=True)
        # raw ratio of log sums: ordering reversed relative to the default
        assert d[1] > d[0]
        with pytest.raises(IdentityError, match="degenerate"):
            hashtag_affinity(one_dim_identity([0.8, 0.3]), spec_for([0], [0.8]),
                             paper_literal=True)

    @given(st.integers(0, 2**31 - 1), st.integers(2, 12))
    @settings(max_examples=25, deadline=None)
    def test_bounds_and_argmax(self, seed, n_agents):
        rng = np.random.default_rng(seed)
        schema = CategorySchema([("c", ["r0", "r1"])])
        ids = IdentityMatrix(rng.random((n_agents, 2)), schema)
        d = hashtag_affinity(ids, spec_for([0, 1], rng.random(2)))
        assert (d > 0).all() and (d <= 1).all()
        assert d.max() == 1.0


class TestEdgeAffinity:
    def net_and_ids(self):
        # i has in-neighbours j (distance 0.1) and k (distance 0.4)
        net = make_net([("j", "i", 1.0), ("k", "i", 2.0)])
        order = [net.index(x) for x in ("i", "j", "k")]
        vals = np.zeros(net.n_nodes)
        vals[order[0]], vals[order[1]], vals[order[2]] = 0.5, 0.6, 0.9
        return net, one_dim_identity(vals)

    def test_hand_values(self):
        net, ids = self.net_and_ids()
        i, j, k = net.index("i"), net.index("j"), net.index("k")
        assert delta_edge(net, ids, i, j, [0]) == 1.0
        assert abs(delta_edge(net, ids, i, k, [0]) - 0.6 / 0.9) < 1e-9

    def test_singleton_neighbourhood_scores_one(self):
        net = make_net([("j", "i", 1.0)])
        ids = one_dim_identity([0.1, 0.95])
        assert delta_edge(net, ids, net.index("i"), net.index("j"), [0]) == 1.0

    def test_identical_argmax_neighbour_scores_one(self):
        net, ids = self.net_and_ids()
        vals = ids.values.copy()
        vals[net.index("j")] = vals[net.index("i")]
        ids2 = one_dim_identity(vals.ravel())
        assert delta_edge(net, ids2, net.index("i"), net.index("j"), [0]) == 1.0

    def test_non_neighbour_is_error(self):
        net = make_net([("j", "i", 1.0), ("k", "x", 1.0)])
        ids = one_dim_identity(np.zeros(net.n_nodes) + 0.5)
        with pytest.raises(IdentityError):
            delta_edge(net, ids, net.index("i"), net.index("k"), [0])

    def test_cache_matches_single_edge_op(self, small_world):
        net, ids = small_world.net, small_world.ids
        dims = [0, 4, 7]
        cache = edge_affinity(net, ids, dims)
        rng = np.random.default_rng(0)
        for pos in rng.choice(net.n_edges, 25, replace=False):
            i, j = int(net.dst[pos]), int(net.src[pos])
            assert abs(cache[pos] - delta_edge(net, ids, i, j, dims)) < 1e-12

    def test_empty_dims_all_ones(self, small_world):
        cache = edge_affinity(small_world.net, small_world.ids, [])
        assert (cache == 1.0).all()

    def test_bounds(self, small_world):
        cache = edge_affinity(small_world.net, small_world.ids, [0, 1, 2])
        assert (cache > 0).all() and (cache <= 1.0).all()

    def test_paper_literal_runs_desk_scale(self):
        net, ids = self.net_and_ids()
        vals = edge_affinity_paper_literal(net, ids, [0])
        assert vals.shape == (net.n_edges,)


class TestSeedSimilarity:
    def test_identical_seed_vectors(self):
        ids = one_dim_identity([0.4, 0.4, 0.4])
        assert seed_similarity(ids, [0, 1, 2], "only") == 1.0

    def test_opposite_pair(self):
        ids = one_dim_identity([0.0, 1.0])
        assert seed_similarity(ids, [0, 1], "only") == 0.0

    def test_three_seed_hand_average(self):
        ids = one_dim_identity([0.0, 0.5, 1.0])
        got = seed_similarity(ids, [0, 1, 2], "only")
        assert abs(got - (1 - (0.5 + 1.0 + 0.5) / 3)) < 1e-12

    def test_needs_two_seeds(self):
        ids = one_dim_identity([0.3])
        with pytest.raises(IdentityError):
            seed_similarity(ids, [0], "only")
