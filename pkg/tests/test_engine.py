import numpy as np
import pytest
from scipy.stats import kendalltau

from cascadelab import (NETWORK_IDENTITY, NETWORK_ONLY, Cascade, HashtagSpec,
                        SimulationConfig, build_delta_caches, novelty,
                        run_simulation)
from cascadelab.engine import EngineError, agent_state, apply_stop_rule
from cascadelab.graph import GraphError
from conftest import make_net, one_dim_identity


def pair_net():
    return make_net([("a", "b", 1.0)])


def pair_ids(net):
    return one_dim_identity(np.full(net.n_nodes, 0.5))


def spec_seeded(seeds, size=10):
    return HashtagSpec(tag="t", seeds=list(seeds), empirical_size=size)


class TestNovelty:
    def test_fresh_is_one(self):
        assert novelty(0, 4) == 1.0

    def test_cap_is_zero(self):
        assert novelty(4, 4) == 0.0
        assert novelty(9, 4) == 0.0

    def test_halfway(self):
        assert abs(novelty(2, 4) - 0.5) < 1e-12

    def test_zero_cap_is_error(self):
        with pytest.raises(EngineError):
            novelty(1, 0)

    def test_vectorised(self):
        out = novelty(np.array([0, 2, 4]), 4)
        assert np.allclose(out, [1.0, 0.5, 0.0])


class TestCascade:
    def test_requires_sorted_times(self):
        with pytest.raises(EngineError):
            Cascade([0, 1], [3, 1], [0])

    def test_rejects_negative_times(self):
        with pytest.raises(EngineError):
            Cascade([0], [-1], [0])

    def test_first_usages_order(self):
        c = Cascade([5, 3, 5, 1], [0, 1, 1, 2], [5])
        agents, times = c.first_usages()
        assert agents.tolist() == [5, 3, 1]
        assert times.tolist() == [0, 1, 2]

    def test_equality(self):
        a = Cascade([0, 1], [0, 1], [0])
        b = Cascade([0, 1], [0, 1], [0])
        assert a == b and not (a != b)


class TestStopRule:
    def test_fires_after_warmup(self):
        cum = list(range(1, 50)) + [49] * 50  # growth stalls at step 48
        assert apply_stop_rule(cum, warmup=10, window=5, growth=0.01) == 53

    def test_none_when_growing(self):
        cum = [2 ** k for k in range(20)]
        assert apply_stop_rule(cum, warmup=5, window=3, growth=0.01) is None


class TestTwoNodeOracle:
    def test_exactly_two_events(self):
        net = pair_net()
        ids = pair_ids(net)
        cfg = SimulationConfig(stickiness=1.0, decay=0.0, novelty_cap=1,
                               variant=NETWORK_ONLY, max_steps=50, warmup=5,
                               stop_window=3, rng_seed=0)
        cascade = run_simulation(net, ids, spec_seeded(["a"]), cfg)
        a, b = net.index("a"), net.index("b")
        assert cascade.events == [(a, 0), (b, 1)]

    def test_zero_stickiness_keeps_only_seeds(self, small_world):
        seeds = [small_world.net.node_ids[i] for i in range(5)]
        cfg = SimulationConfig(stickiness=0.0, rng_seed=3)
        cascade = run_simulation(small_world.net, small_world.ids,
                                 spec_seeded(seeds), cfg)
        assert cascade.n_events == 5
        assert (cascade.times == 0).all()

    def test_identical_seeds_identical_cascades(self, small_world):
        seeds = [small_world.net.node_ids[i] for i in (1, 50, 99)]
        cfg = SimulationConfig(stickiness=0.6, decay=0.9, novelty_cap=20,
                               max_steps=200, rng_seed=42)
        c1 = run_simulation(small_world.net, small_world.ids, spec_seeded(seeds), cfg)
        c2 = run_simulation(small_world.net, small_world.ids, spec_seeded(seeds), cfg)
        assert c1 == c2


class TestEngineSemantics:
    def test_decay_applies_on_unexposed_steps(self):
        # b is exposed once at t=1 (p = S exactly), then decays each step.
        net = pair_net()
        ids = pair_ids(net)
        s = 1e-9
        cfg = SimulationConfig(stickiness=s, decay=0.5, novelty_cap=5,
                               variant=NETWORK_ONLY, max_steps=3, warmup=100,
                               rng_seed=0)
        state = {}
        cascade = run_simulation(net, ids, spec_seeded(["a"]), cfg, state_out=state)
        assert cascade.n_events == 1
        b = net.index("b")
        assert state["adoption_prob"][b] == s * 0.5 * 0.5
        assert state["exposures"][b] == 1

    def test_seed_starts_exposed(self):
        net = pair_net()
        ids = pair_ids(net)
        cfg = SimulationConfig(stickiness=0.0, max_steps=2, warmup=100, rng_seed=0)
        state = {}
        run_simulation(net, ids, spec_seeded(["a"]), cfg, state_out=state)
        st = agent_state(state, net.index("a"))
        assert st.exposed and st.exposures == 1 and st.adoption_prob == 0.0

    def test_no_spontaneous_adoption(self):
        # x,y form a separate component: never exposed, never adopt
        net = make_net([("a", "b", 1.0), ("x", "y", 1.0)])
        ids = pair_ids(net)
        cfg = SimulationConfig(stickiness=1.0, decay=0.9, novelty_cap=20,
                               max_steps=150, rng_seed=7)
        state = {}
        cascade = run_simulation(net, ids, spec_seeded(["a"]), cfg, state_out=state)
        for name in ("x", "y"):
            st = agent_state(state, net.index(name))
            assert st.adoption_prob == 0.0 and not st.exposed
            assert net.index(name) not in cascade.adopters()

    def test_exposure_per_use_counts_each_neighbour(self):
        # two seeds both point at z: one step exposes z once vs twice
        net = make_net([("s1", "z", 1.0), ("s2", "z", 1.0)])
        ids = pair_ids(net)
        base = dict(stickiness=0.0, max_steps=1, warmup=100, rng_seed=0)
        st_step, st_use = {}, {}
        run_simulation(net, ids, spec_seeded(["s1", "s2"]),
                       SimulationConfig(**base), state_out=st_step)
        run_simulation(net, ids, spec_seeded(["s1", "s2"]),
                       SimulationConfig(exposure_per_use=True, **base),
                       state_out=st_use)
        z = net.index("z")
        assert st_step["exposures"][z] == 1
        assert st_use["exposures"][z] == 2

    def test_probability_bounds_validated(self, small_world):
        seeds = [small_world.net.node_ids[i] for i in range(10)]
        cfg = SimulationConfig(stickiness=1.0, decay=0.9, novelty_cap=20,
                               max_steps=150, rng_seed=5, validate=True)
        run_simulation(small_world.net, small_world.ids, spec_seeded(seeds), cfg)

    def test_empty_seeds_is_error(self, small_world):
        with pytest.raises(Exception):
            spec_seeded([])

    def test_unknown_seed_is_error(self, small_world):
        cfg = SimulationConfig(rng_seed=0)
        with pytest.raises(GraphError):
            run_simulation(small_world.net, small_world.ids,
                           spec_seeded(["nope"]), cfg)

    def test_halts_by_stop_rule_before_cap(self, small_world):
        seeds = [small_world.net.node_ids[i] for i in range(10)]
        cfg = SimulationConfig(stickiness=0.8, decay=0.9, novelty_cap=20,
                               max_steps=5000, warmup=50, stop_window=10,
                               stop_growth=0.01, rng_seed=1)
        cascade = run_simulation(small_world.net, small_world.ids,
                                 spec_seeded(seeds), cfg)
        assert cascade.times.max() < 5000


class TestVariantEquivalence:
    def test_identical_identities_make_variants_agree(self, small_world):
        net = small_world.net
        ids = one_dim_identity(np.full(net.n_nodes, 0.5))
        seeds = [net.node_ids[i] for i in (0, 11, 222)]
        spec = spec_seeded(seeds)
        for seed in range(10):
            cfg_ni = SimulationConfig(stickiness=0.7, decay=0.9, novelty_cap=20,
                                      variant=NETWORK_IDENTITY, max_steps=150,
                                      rng_seed=seed)
            cfg_n = SimulationConfig(stickiness=0.7, decay=0.9, novelty_cap=20,
                                     variant=NETWORK_ONLY, max_steps=150,
                                     rng_seed=seed)
            c_ni = run_simulation(net, ids, spec, cfg_ni)
            c_n = run_simulation(net, ids, spec, cfg_n)
            assert c_ni == c_n


class TestStochasticDominance:
    def test_mean_size_nondecreasing_in_stickiness(self, small_world):
        net, ids = small_world.net, small_world.ids
        seeds = [net.node_ids[i] for i in range(5)]
        spec = spec_seeded(seeds)
        grid = np.round(np.arange(0.1, 1.01, 0.1), 2)
        runs = 20  # 200 seeded runs total
        means = []
        for s in grid:
            caches = build_delta_caches(net, ids, spec, NETWORK_IDENTITY)
            sizes = []
            for k in range(runs):
                cfg = SimulationConfig(stickiness=float(s), decay=0.9,
                                       novelty_cap=20, max_steps=150,
                                       rng_seed=1000 * int(s * 10) + k)
                sizes.append(run_simulation(net, ids, spec, cfg, caches=caches).n_events)
            means.append(np.mean(sizes))
        tau, p_two_sided = kendalltau(grid, means)
        assert tau > 0
        assert p_two_sided / 2 < 0.01  # one-sided trend test
