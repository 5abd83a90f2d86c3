"""Agent identity vectors, hashtag identity inference, and similarity terms.

Identities are static per run: each agent carries a vector in [0,1]^K whose
registers are grouped into named categories. A hashtag signals the registers
on which its seed adopters are extreme, and two log-space similarity terms
(agent-to-hashtag and along each edge) feed the adoption probability.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .graph import Network

EPS = 1e-6


class IdentityError(ValueError):
    pass


@dataclass
class CategorySchema:
    """Ordered identity categories, each a list of register names."""
    categories: list[tuple[str, list[str]]]

    def __post_init__(self):
        names = self.register_names
        if len(names) != len(set(names)):
            raise IdentityError("register names must be unique")
        if self.dimension < 1:
            raise IdentityError("schema needs at least one register")

    @property
    def register_names(self) -> list[str]:
        return [r for _, regs in self.categories for r in regs]

    @property
    def dimension(self) -> int:
        return sum(len(regs) for _, regs in self.categories)

    def category_dims(self, name: str) -> np.ndarray:
        """Indices of the registers belonging to one category."""
        start = 0
        for cat, regs in self.categories:
            if cat == name:
                return np.arange(start, start + len(regs))
            start += len(regs)
        raise IdentityError(f"unknown category {name!r}")

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["category", "register"])
            for cat, regs in self.categories:
                for r in regs:
                    w.writerow([cat, r])

    @classmethod
    def load(cls, path) -> "CategorySchema":
        cats: list[tuple[str, list[str]]] = []
        with open(path, "r", encoding="utf-8", newline="") as fh:
            rows = list(csv.reader(fh))
        for cat, reg in rows[1:]:
            if cats and cats[-1][0] == cat:
                cats[-1][1].append(reg)
            else:
                cats.append((cat, [reg]))
        return cls(cats)


@dataclass
class IdentityMatrix:
    """Agents-by-registers matrix of identity affiliations in [0,1]."""
    values: np.ndarray
    schema: CategorySchema

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2 or self.values.shape[1] != self.schema.dimension:
            raise IdentityError(
                f"identity matrix must be (agents, {self.schema.dimension})")
        if np.isnan(self.values).any() or self.values.min() < 0 or self.values.max() > 1:
            raise IdentityError("identity entries must lie in [0,1]")

    @property
    def n_agents(self) -> int:
        return self.values.shape[0]


def save_identity_csv(ids: IdentityMatrix, node_ids, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["node_id"] + ids.schema.register_names)
        for nid, row in zip(node_ids, ids.values):
            w.writerow([nid] + [repr(float(v)) for v in row])


def load_identity_csv(path, schema: CategorySchema, node_ids) -> IdentityMatrix:
    """Read an identity CSV and align rows with the given node order."""
    by_id = {}
    with open(path, "r", encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    header = rows[0]
    if header[1:] != schema.register_names:
        raise IdentityError("identity CSV header does not match schema registers")
    for row in rows[1:]:
        by_id[row[0]] = [float(v) for v in row[1:]]
    try:
        values = np.array([by_id[nid] for nid in node_ids])
    except KeyError as e:
        raise IdentityError(f"identity CSV is missing node {e.args[0]!r}") from None
    return IdentityMatrix(values, schema)


@dataclass
class HashtagSpec:
    """One hashtag: its seed adopters, signalled identity, and empirical size."""
    tag: str
    seeds: list[str]
    relevant_dims: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))
    hashtag_identity: np.ndarray = field(default_factory=lambda: np.empty(0))
    empirical_size: int = 0
    sample_rate: float = 1.0

    def __post_init__(self):
        self.relevant_dims = np.asarray(self.relevant_dims, dtype=np.int64)
        self.hashtag_identity = np.asarray(self.hashtag_identity, dtype=np.float64)
        if len(self.seeds) < 1:
            raise IdentityError(f"hashtag {self.tag!r} needs at least one seed")
        if len(set(self.seeds)) != len(self.seeds):
            raise IdentityError(f"hashtag {self.tag!r} has duplicate seeds")
        if len(self.relevant_dims) != len(self.hashtag_identity):
            raise IdentityError("relevant_dims and hashtag_identity must align")
        if len(self.hashtag_identity) and (
                self.hashtag_identity.min() < 0 or self.hashtag_identity.max() > 1):
            raise IdentityError("hashtag identity entries must lie in [0,1]")
        if not (0 < self.sample_rate <= 1):
            raise IdentityError("sample_rate must be in (0,1]")


def infer_hashtag_identity(ids: IdentityMatrix, seeds, percentile: float = 0.75):
    """Signalled dimensions and identity from the seed adopters.

    A register enters the relevant set iff the median seed value reaches the
    population quantile at ``percentile`` (top quartile by default); the
    hashtag's value on that register is the seed median. An empty result is
    allowed and makes the hashtag identity-neutral downstream.
    """
    seeds = np.asarray(seeds, dtype=np.int64)
    if len(seeds) == 0:
        raise IdentityError("cannot infer hashtag identity from an empty seed list")
    if not (0 < percentile < 1):
        raise IdentityError("percentile must be in (0,1)")
    med = np.median(ids.values[seeds], axis=0)
    cut = np.quantile(ids.values, percentile, axis=0)
    dims = np.flatnonzero(med >= cut)
    return dims, med[dims]


def _log_sim(a, b, eps=EPS):
    """log of per-register similarity, floored at eps so log(0) cannot occur."""
    return np.log(np.maximum(1.0 - np.abs(a - b), eps))


def hashtag_affinity(ids: IdentityMatrix, spec: HashtagSpec, *, eps: float = EPS,
                     paper_literal: bool = False) -> np.ndarray:
    """Agent-to-hashtag similarity for every agent, in (0,1].

    Default mode normalises log-similarity by subtracting the population
    maximum, so the most similar agent scores exactly 1. ``paper_literal``
    computes the raw ratio of log-sums instead (degenerate when a perfect
    match exists, and not bounded by 1); it exists for comparison only.
    """
    n = ids.n_agents
    dims = spec.relevant_dims
    if len(dims) == 0:
        return np.ones(n)
    ls_per_dim = _log_sim(ids.values[:, dims], spec.hashtag_identity[None, :], eps)
    ls = ls_per_dim.sum(axis=1)
    if paper_literal:
        denom = ls_per_dim.max(axis=0).sum()
        if denom == 0.0:
            raise IdentityError(
                "paper-literal affinity is degenerate: a perfect match makes the "
                "denominator zero")
        return ls / denom
    return np.exp(ls - ls.max())


def delta_agent_hashtag(ids: IdentityMatrix, agent: int, spec: HashtagSpec, *,
                        eps: float = EPS, paper_literal: bool = False) -> float:
    return float(hashtag_affinity(ids, spec, eps=eps, paper_literal=paper_literal)[agent])


def edge_affinity(net: Network, ids: IdentityMatrix, relevant_dims, *, eps: float = EPS,
                  chunk: int = 500_000) -> np.ndarray:
    """Similarity of each directed edge's endpoints, aligned with the edge order.

    For an edge j -> i the value is exp(logsim(i,j) - max over i's in-neighbours),
    so each node's most similar in-neighbour scores exactly 1. Values are cached
    per hashtag by callers since the relevant dimensions are hashtag-specific.
    """
    dims = np.asarray(relevant_dims, dtype=np.int64)
    m = net.n_edges
    if len(dims) == 0 or m == 0:
        return np.ones(m)
    ls = np.empty(m)
    vals = ids.values[:, dims]
    for s in range(0, m, chunk):
        e = min(s + chunk, m)
        ls[s:e] = _log_sim(vals[net.src[s:e]], vals[net.dst[s:e]], eps).sum(axis=1)
    peak = np.full(net.n_nodes, -np.inf)
    np.maximum.at(peak, net.dst, ls)
    return np.exp(ls - peak[net.dst])


def edge_affinity_paper_literal(net: Network, ids: IdentityMatrix, relevant_dims, *,
                                eps: float = EPS) -> np.ndarray:
    """Raw ratio form of the edge similarity, for comparison runs only.

    The denominator takes, per register, the most similar of i's in-neighbours
    to j. The neighbour j itself is excluded, without which the ratio is 0/0
    on every edge; with a singleton neighbourhood the value falls back to 1.
    Not clamped to (0,1]. Quadratic in degree, desk scale only.
    """
    dims = np.asarray(relevant_dims, dtype=np.int64)
    m = net.n_edges
    if len(dims) == 0 or m == 0:
        return np.ones(m)
    vals = ids.values[:, dims]
    out = np.ones(m)
    for i in range(net.n_nodes):
        s, e = net.in_indptr[i], net.in_indptr[i + 1]
        srcs = net.in_src[s:e]
        if len(srcs) == 0:
            continue
        sims = _log_sim(vals[srcs][:, None, :], vals[srcs][None, :, :], eps)
        for k, j in enumerate(srcs):
            others = np.delete(np.arange(len(srcs)), k)
            num = _log_sim(vals[i], vals[j], eps).sum()
            if len(others) == 0:
                val = 1.0
            else:
                denom = sims[others, k, :].max(axis=0).sum()
                if denom == 0.0:
                    raise IdentityError(
                        "paper-literal edge affinity is degenerate: an identical "
                        "neighbour makes the denominator zero")
                val = num / denom
            out[net.in_pos[s + k]] = val
    return out


def delta_edge(net: Network, ids: IdentityMatrix, i: int, j: int, relevant_dims, *,
               eps: float = EPS) -> float:
    """Similarity weight of in-neighbour j in i's adoption sum."""
    srcs, _ = net.in_neighbors(i)
    if j not in srcs:
        raise IdentityError(f"node {j} is not an in-neighbour of node {i}")
    dims = np.asarray(relevant_dims, dtype=np.int64)
    if len(dims) == 0:
        return 1.0
    ls = _log_sim(ids.values[srcs][:, dims], ids.values[i][dims][None, :], eps).sum(axis=1)
    return float(np.exp(ls[srcs == j][0] - ls.max()))


def seed_similarity(ids: IdentityMatrix, seeds, category: str) -> float:
    """Mean pairwise similarity of the seed adopters within one identity category."""
    seeds = np.asarray(seeds, dtype=np.int64)
    if len(seeds) < 2:
        raise IdentityError("seed similarity needs at least 2 seeds")
    dims = ids.schema.category_dims(category)
    vals = ids.values[seeds][:, dims]
    total, pairs = 0.0, 0
    for a in range(len(seeds)):
        diff = np.abs(vals[a + 1:] - vals[a]).mean(axis=1)
        total += (1.0 - diff).sum()
        pairs += len(diff)
    return total / pairs
