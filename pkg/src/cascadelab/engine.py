"""Usage-based stochastic cascade simulator.

Each step, every agent exposed by a neighbour's use in the previous step
recomputes its usage probability (stickiness x hashtag affinity x novelty x
the similarity-weighted fraction of in-neighbours who have ever adopted);
agents exposed earlier but not now decay multiplicatively. All agents with
positive probability then draw independently and may emit a usage event.
The run halts when cumulative usage growth stays under a threshold across a
trailing window (after a warmup), or at the step cap.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .graph import Network, _gather_rows
from .identity import EPS, HashtagSpec, IdentityMatrix, edge_affinity, \
    edge_affinity_paper_literal, hashtag_affinity
from .rng import make_rng

NETWORK_IDENTITY = "network+identity"
NETWORK_ONLY = "network-only"
IDENTITY_ONLY = "identity-only"
VARIANTS = (NETWORK_IDENTITY, NETWORK_ONLY, IDENTITY_ONLY)


class EngineError(ValueError):
    pass


@dataclass
class SimulationConfig:
    """Per-run parameters. The decay rate and novelty cap default to the
    inherited hyperparameter values; tests pin them explicitly."""
    stickiness: float = 0.5
    decay: float = 0.9              # r: per-step multiplier on unexposed steps
    novelty_cap: int = 20           # theta: exposures after which novelty hits 0
    variant: str = NETWORK_IDENTITY
    max_steps: int = 1000
    stop_window: int = 10
    stop_growth: float = 0.01
    warmup: int = 100
    rng_seed: int = 0
    exposure_per_use: bool = False  # count one exposure per using neighbour, not per step
    paper_literal_delta: bool = False
    validate: bool = False          # assert p in [0,1] every step

    def __post_init__(self):
        # Calibration searches [0.1, 1], but S=0 runs are legal (seed-only cascades).
        if not (0.0 <= self.stickiness <= 1.0):
            raise EngineError("stickiness must lie in [0,1]")
        if not (0.0 <= self.decay <= 1.0):
            raise EngineError("decay must lie in [0,1]")
        if self.novelty_cap < 1:
            raise EngineError("novelty_cap must be >= 1")
        if self.variant not in VARIANTS:
            raise EngineError(f"unknown variant {self.variant!r}")
        if self.stop_window < 1 or self.max_steps < 1:
            raise EngineError("stop_window and max_steps must be >= 1")


@dataclass
class AgentState:
    """Probe view of one agent after a run."""
    adoption_prob: float
    exposures: int
    exposed: bool


class Cascade:
    """Time-ordered usage events of one hashtag, plus its seed set."""

    def __init__(self, agents, times, seeds):
        self.agents = np.asarray(agents, dtype=np.int64)
        self.times = np.asarray(times, dtype=np.int64)
        self.seeds = np.asarray(seeds, dtype=np.int64)
        if len(self.agents) != len(self.times):
            raise EngineError("agents and times must align")
        if len(self.times) and (np.diff(self.times) < 0).any():
            raise EngineError("cascade events must be sorted by time")
        if len(self.times) and self.times.min() < 0:
            raise EngineError("timesteps must be non-negative")

    @property
    def n_events(self) -> int:
        return len(self.agents)

    @property
    def events(self):
        return list(zip(self.agents.tolist(), self.times.tolist()))

    def adopters(self) -> np.ndarray:
        return np.unique(self.agents)

    def n_adopters(self) -> int:
        return len(self.adopters())

    def first_usages(self):
        """Adopters in order of first use (ties by agent index), with those times."""
        order = np.lexsort((self.agents, self.times))
        seen = set()
        agents, times = [], []
        for k in order:
            a = int(self.agents[k])
            if a not in seen:
                seen.add(a)
                agents.append(a)
                times.append(int(self.times[k]))
        return np.array(agents, dtype=np.int64), np.array(times, dtype=np.int64)

    def counts_per_step(self) -> np.ndarray:
        if self.n_events == 0:
            return np.zeros(0, dtype=np.int64)
        return np.bincount(self.times)

    def __eq__(self, other):
        return (isinstance(other, Cascade)
                and np.array_equal(self.agents, other.agents)
                and np.array_equal(self.times, other.times)
                and np.array_equal(self.seeds, other.seeds))

    def __repr__(self):
        return f"Cascade({self.n_events} events, {self.n_adopters()} adopters)"


def novelty(n, theta):
    """Exposure-decay multiplier: 1 before any exposure, 0 from theta onward."""
    if theta < 1:
        raise EngineError("novelty_cap must be >= 1")
    n = np.minimum(n, theta)
    return 0.5 * (np.cos(np.pi * n / theta) + 1.0)


@dataclass
class DeltaCaches:
    """Per-hashtag similarity terms shared read-only across runs."""
    agent: np.ndarray  # affinity of each agent to the hashtag
    edge: np.ndarray   # affinity along each directed edge (primary order)
    den: np.ndarray    # sum of w * edge affinity into each node


def build_delta_caches(net: Network, ids: IdentityMatrix, spec: HashtagSpec,
                       variant: str = NETWORK_IDENTITY, *, eps: float = EPS,
                       paper_literal: bool = False) -> DeltaCaches:
    if variant == NETWORK_ONLY:
        agent = np.ones(net.n_nodes)
        edge = np.ones(net.n_edges)
    else:
        agent = hashtag_affinity(ids, spec, eps=eps, paper_literal=paper_literal)
        if paper_literal:
            edge = edge_affinity_paper_literal(net, ids, spec.relevant_dims, eps=eps)
        else:
            edge = edge_affinity(net, ids, spec.relevant_dims, eps=eps)
    return DeltaCaches(agent=agent, edge=edge, den=net.in_strength(net.weight * edge))


def apply_stop_rule(cumulative, warmup: int, window: int, growth: float):
    """First step at which trailing growth falls below the threshold, or None.

    ``cumulative[t]`` is total usage through step t. Checked only for
    t >= max(warmup, window).
    """
    start = max(warmup, window)
    for t in range(start, len(cumulative)):
        prev = cumulative[t - window]
        if prev > 0 and (cumulative[t] - prev) < growth * prev:
            return t
    return None


def run_simulation(net: Network, ids: IdentityMatrix, spec: HashtagSpec,
                   cfg: SimulationConfig, caches: DeltaCaches | None = None,
                   state_out: dict | None = None) -> Cascade:
    """Simulate one cascade. Deterministic given ``cfg.rng_seed``.

    For the identity-only variant the caller passes a configuration-model
    rewired network (the dynamics are unchanged). Seeds each emit one usage
    at t=0 and start with one exposure already counted: having used the
    hashtag, they have heard it, so their first recompute sees novelty(1).
    """
    if len(spec.seeds) == 0:
        raise EngineError("cannot simulate with no seeds")
    seeds = net.indices(spec.seeds)
    if caches is None:
        caches = build_delta_caches(net, ids, spec, cfg.variant,
                                    paper_literal=cfg.paper_literal_delta)
    rng = make_rng(cfg.rng_seed)
    n = net.n_nodes
    s_h = cfg.stickiness
    theta = cfg.novelty_cap
    r = cfg.decay

    p = np.zeros(n)
    nexp = np.zeros(n, dtype=np.int64)
    ever = np.zeros(n, dtype=bool)
    num = np.zeros(n)

    ever[seeds] = True
    nexp[seeds] = 1
    tgt, pos = _gather_rows(net.out_indptr, net.dst, seeds)
    wdelta = net.weight * caches.edge
    np.add.at(num, tgt, wdelta[pos])

    ev_agents = [seeds.copy()]
    ev_times = [np.zeros(len(seeds), dtype=np.int64)]
    cum = [len(seeds)]
    actives = seeds

    for t in range(1, cfg.max_steps + 1):
        if len(actives):
            tgt, pos = _gather_rows(net.out_indptr, net.dst, actives)
            exposed_now = np.unique(tgt)
        else:
            tgt = pos = exposed_now = np.empty(0, dtype=np.int64)

        decaying = p > 0
        decaying[exposed_now] = False
        p[decaying] *= r

        if len(exposed_now):
            p[exposed_now] = (s_h * caches.agent[exposed_now]
                              * novelty(nexp[exposed_now], theta)
                              * num[exposed_now] / caches.den[exposed_now])
            if cfg.exposure_per_use:
                nexp += np.bincount(tgt, minlength=n)
            else:
                nexp[exposed_now] += 1

        if cfg.validate and len(exposed_now):
            pe = p[exposed_now]
            assert pe.min() >= 0 and pe.max() <= 1 + 1e-12, "p left [0,1]"

        live = np.flatnonzero(p > 0)
        if len(live) == 0 and len(actives) == 0:
            break  # nothing can ever fire again
        users = live[rng.random(len(live)) < p[live]] if len(live) else live
        if len(users):
            ev_agents.append(users)
            ev_times.append(np.full(len(users), t, dtype=np.int64))
            fresh = users[~ever[users]]
            if len(fresh):
                ever[fresh] = True
                ft, fp = _gather_rows(net.out_indptr, net.dst, fresh)
                np.add.at(num, ft, wdelta[fp])
        actives = users
        cum.append(cum[-1] + len(users))

        if t >= max(cfg.warmup, cfg.stop_window):
            prev = cum[t - cfg.stop_window]
            if (cum[t] - prev) < cfg.stop_growth * prev:
                break

    if state_out is not None:
        state_out.update(adoption_prob=p, exposures=nexp, adopted=ever,
                         exposed=nexp > 0)
    return Cascade(np.concatenate(ev_agents), np.concatenate(ev_times), seeds)


def agent_state(state: dict, i: int) -> AgentState:
    return AgentState(adoption_prob=float(state["adoption_prob"][i]),
                      exposures=int(state["exposures"][i]),
                      exposed=bool(state["exposed"][i]))
