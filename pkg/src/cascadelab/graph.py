"""Weighted reciprocal social graph: storage, IO, rewiring, and structural analytics.

The graph is stored in CSR form over dense integer node indices so that the
simulation engine and the metrics can run vectorised numpy passes on
million-edge networks. Opaque string node ids are kept alongside and only
touched at IO boundaries.
"""

from __future__ import annotations

import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .rng import make_rng


class GraphError(ValueError):
    """Malformed edge input or an impossible graph operation."""


def _gather_rows(indptr, indices, rows):
    """Concatenate CSR slices for many rows at once (no Python loop)."""
    starts = indptr[rows]
    counts = indptr[rows + 1] - starts
    total = int(counts.sum())
    if total == 0:
        return np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64)
    shift = np.repeat(starts - np.concatenate(([0], np.cumsum(counts)[:-1])), counts)
    pos = shift + np.arange(total, dtype=np.int64)
    return indices[pos], pos


class Network:
    """Directed, weighted graph in which every edge has a reverse edge.

    Weights may differ by direction; self-loops and duplicate (src, dst)
    pairs are rejected. Immutable after construction: analytics and the
    engine share one instance across concurrent runs.
    """

    def __init__(self, node_ids, src, dst, weight, *, validate=True):
        self.node_ids = list(node_ids)
        self._index = {nid: i for i, nid in enumerate(self.node_ids)}
        if len(self._index) != len(self.node_ids):
            raise GraphError("duplicate node id in node list")
        n = len(self.node_ids)

        src = np.asarray(src, dtype=np.int64)
        dst = np.asarray(dst, dtype=np.int64)
        weight = np.asarray(weight, dtype=np.float64)
        order = np.lexsort((dst, src))
        self.src = src[order]
        self.dst = dst[order]
        self.weight = weight[order]
        self.node_count = n

        if validate:
            self._validate()

        # CSR by source. Edges are sorted by (src, dst), so bincount suffices.
        counts = np.bincount(self.src, minlength=n)
        self.out_indptr = np.concatenate(([0], np.cumsum(counts))).astype(np.int64)

        # In-adjacency: in_pos[k] is the position (in the primary arrays) of the
        # k-th edge when edges are sorted by (dst, src).
        self.in_pos = np.lexsort((self.src, self.dst))
        in_counts = np.bincount(self.dst, minlength=n)
        self.in_indptr = np.concatenate(([0], np.cumsum(in_counts))).astype(np.int64)
        self.in_src = self.src[self.in_pos]
        self.in_weight = self.weight[self.in_pos]

        # Position of each edge's reverse. Doubles as the reciprocity proof.
        keys = self.src * n + self.dst
        rev_keys = self.dst * n + self.src
        self.rev_pos = np.searchsorted(keys, rev_keys)
        if validate and self.n_edges:
            clipped = np.minimum(self.rev_pos, self.n_edges - 1)
            hit = (self.rev_pos < self.n_edges) & (keys[clipped] == rev_keys)
            if not hit.all():
                bad = int(np.flatnonzero(~hit)[0])
                raise GraphError(
                    f"unreciprocated edge {self.node_ids[self.src[bad]]} -> "
                    f"{self.node_ids[self.dst[bad]]}"
                )
            self.rev_pos = clipped

    def _validate(self):
        n = self.node_count
        if self.n_edges == 0:
            return
        if self.src.min() < 0 or self.src.max() >= n or self.dst.min() < 0 or self.dst.max() >= n:
            raise GraphError("edge endpoint out of range")
        if (self.src == self.dst).any():
            bad = int(np.flatnonzero(self.src == self.dst)[0])
            raise GraphError(f"self-loop at node {self.node_ids[self.src[bad]]}")
        if (self.weight <= 0).any():
            bad = int(np.flatnonzero(self.weight <= 0)[0])
            raise GraphError(
                f"nonpositive weight on edge {self.node_ids[self.src[bad]]} -> "
                f"{self.node_ids[self.dst[bad]]}"
            )
        keys = self.src * n + self.dst
        if len(np.unique(keys)) != len(keys):
            dup = int(np.flatnonzero(np.diff(keys) == 0)[0])
            raise GraphError(
                f"duplicate edge {self.node_ids[self.src[dup]]} -> "
                f"{self.node_ids[self.dst[dup]]}"
            )

    # -- basic accessors -------------------------------------------------

    @property
    def n_nodes(self) -> int:
        return self.node_count

    @property
    def n_edges(self) -> int:
        return len(self.src)

    def index(self, node_id) -> int:
        try:
            return self._index[node_id]
        except KeyError:
            raise GraphError(f"unknown node id {node_id!r}") from None

    def indices(self, node_ids) -> np.ndarray:
        return np.array([self.index(i) for i in node_ids], dtype=np.int64)

    @property
    def degree(self) -> np.ndarray:
        """Undirected degree (= in-degree = out-degree, by reciprocity)."""
        return np.diff(self.out_indptr)

    def out_neighbors(self, i):
        s, e = self.out_indptr[i], self.out_indptr[i + 1]
        return self.dst[s:e], self.weight[s:e]

    def in_neighbors(self, i):
        s, e = self.in_indptr[i], self.in_indptr[i + 1]
        return self.in_src[s:e], self.in_weight[s:e]

    def has_edge(self, i, j) -> bool:
        s, e = self.out_indptr[i], self.out_indptr[i + 1]
        k = np.searchsorted(self.dst[s:e], j)
        return k < e - s and self.dst[s + k] == j

    def symmetrized_weight(self) -> np.ndarray:
        """(w_ij + w_ji) / 2 per directed edge, aligned with the primary edge order."""
        return 0.5 * (self.weight + self.weight[self.rev_pos])

    def undirected_pairs(self):
        """Each reciprocal pair once, as (lo, hi) index arrays plus both weights."""
        mask = self.src < self.dst
        return self.src[mask], self.dst[mask]

    def in_strength(self, edge_values=None) -> np.ndarray:
        """Sum a per-edge quantity (primary edge order) into each destination node."""
        vals = self.weight if edge_values is None else edge_values
        out = np.zeros(self.node_count)
        np.add.at(out, self.dst, vals)
        return out


# ---------------------------------------------------------------------------
# Edge-list IO
# ---------------------------------------------------------------------------

def load_edge_list(source, *, symmetrize=False, node_order=None) -> Network:
    """Parse a tab/whitespace separated ``src dst weight`` stream into a Network.

    Lines starting with ``#`` and blank lines are skipped. With
    ``symmetrize=False`` an edge whose reverse is missing is an error; with
    ``symmetrize=True`` the missing reverse is added with the forward weight.
    ``node_order`` (a list of ids) pins the id-to-index mapping, e.g. from a
    persisted node_map.tsv sidecar; otherwise first-seen order is used.
    """
    if isinstance(source, (str, Path)):
        fh = open(source, "r", encoding="utf-8")
        close = True
    elif isinstance(source, bytes):
        fh = io.StringIO(source.decode("utf-8"))
        close = False
    else:
        fh = source
        close = False

    ids: list[str] = []
    index: dict[str, int] = {}
    if node_order is not None:
        for nid in node_order:
            index[nid] = len(ids)
            ids.append(nid)

    def idx(name, lineno):
        if node_order is not None and name not in index:
            raise GraphError(f"line {lineno}: node {name!r} not in node map")
        if name not in index:
            index[name] = len(ids)
            ids.append(name)
        return index[name]

    src, dst, wts = [], [], []
    seen = {}
    try:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 3:
                raise GraphError(f"line {lineno}: expected 'src dst weight', got {line!r}")
            a, b, w_str = parts
            try:
                w = float(w_str)
            except ValueError:
                raise GraphError(f"line {lineno}: bad weight {w_str!r}") from None
            if a == b:
                raise GraphError(f"line {lineno}: self-loop at node {a!r}")
            if w <= 0:
                raise GraphError(f"line {lineno}: nonpositive weight on {a!r} -> {b!r}")
            ia, ib = idx(a, lineno), idx(b, lineno)
            if (ia, ib) in seen:
                raise GraphError(f"line {lineno}: duplicate edge {a!r} -> {b!r}")
            seen[(ia, ib)] = w
            src.append(ia)
            dst.append(ib)
            wts.append(w)
    finally:
        if close:
            fh.close()

    if symmetrize:
        for (ia, ib), w in list(seen.items()):
            if (ib, ia) not in seen:
                seen[(ib, ia)] = w
                src.append(ib)
                dst.append(ia)
                wts.append(w)
    else:
        for ia, ib in seen:
            if (ib, ia) not in seen:
                raise GraphError(
                    f"unreciprocated edge {ids[ia]!r} -> {ids[ib]!r} (symmetrize is off)"
                )

    return Network(ids, src, dst, wts)


def save_edge_list(net: Network, edges_path, node_map_path=None) -> None:
    """Write ``src<TAB>dst<TAB>weight`` plus the id->index sidecar."""
    with open(edges_path, "w", encoding="utf-8") as fh:
        for s, d, w in zip(net.src, net.dst, net.weight):
            fh.write(f"{net.node_ids[s]}\t{net.node_ids[d]}\t{float(w)!r}\n")
    if node_map_path is not None:
        save_node_map(net.node_ids, node_map_path)


def save_node_map(node_ids, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for i, nid in enumerate(node_ids):
            fh.write(f"{nid}\t{i}\n")


def load_node_map(path) -> list[str]:
    order: dict[int, str] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            nid, pos = line.split("\t")
            order[int(pos)] = nid
    return [order[i] for i in range(len(order))]


# ---------------------------------------------------------------------------
# Configuration-model rewiring
# ---------------------------------------------------------------------------

def rewire_configuration_model(net: Network, rng_seed: int, *, max_rounds: int = 2000) -> Network:
    """Degree-preserving random rewiring with reciprocal pairs treated as units.

    The undirected pair multigraph is rebuilt by stub matching; collisions
    (self-loops, duplicate pairs) are repaired by endpoint swaps, which keep
    every node's stub count — hence its in- and out-degree — exact. The
    multiset of original directed weights is then shuffled onto the new
    directed edges. Deterministic given ``rng_seed``.
    """
    rng = make_rng(rng_seed)
    lo, hi = net.undirected_pairs()
    m = len(lo)
    n = net.n_nodes
    if m == 0:
        return Network(net.node_ids, [], [], [], validate=False)

    stubs = np.repeat(np.arange(n, dtype=np.int64), net.degree)
    stubs = stubs[rng.permutation(len(stubs))]
    a = stubs[0::2].copy()
    b = stubs[1::2].copy()

    def bad_mask(a, b):
        lo_ = np.minimum(a, b)
        hi_ = np.maximum(a, b)
        key = lo_ * n + hi_
        order = np.argsort(key, kind="stable")
        dup = np.zeros(m, dtype=bool)
        srt = key[order]
        dup_sorted = np.concatenate(([False], srt[1:] == srt[:-1]))
        dup[order] = dup_sorted
        return (a == b) | dup

    bad = bad_mask(a, b)
    rounds = 0
    while bad.any():
        rounds += 1
        if rounds > max_rounds:
            raise GraphError(
                f"configuration-model rewiring failed to reach a simple reciprocal "
                f"graph after {max_rounds} repair rounds"
            )
        idx = np.flatnonzero(bad)
        partners = rng.integers(0, m, size=len(idx))
        # Swap the b-endpoint of each bad pair with a random partner pair,
        # one at a time: sequential swaps keep the stub multiset intact even
        # when the same pair is touched twice.
        for i, j in zip(idx, partners):
            b[i], b[j] = b[j], b[i]
        bad = bad_mask(a, b)

    new_src = np.concatenate([a, b])
    new_dst = np.concatenate([b, a])
    new_w = net.weight[rng.permutation(net.n_edges)]
    return Network(net.node_ids, new_src, new_dst, new_w)


# ---------------------------------------------------------------------------
# Centralities, clustering, communities
# ---------------------------------------------------------------------------

def pagerank(net: Network, damping: float = 0.85, tol: float = 1e-10,
             max_iter: int = 1000) -> np.ndarray:
    """Power iteration on the weighted out-edge transition matrix. Sums to 1."""
    n = net.n_nodes
    if n == 0:
        return np.zeros(0)
    out_strength = np.zeros(n)
    np.add.at(out_strength, net.src, net.weight)
    dangling = out_strength == 0
    safe = np.where(dangling, 1.0, out_strength)
    # column-stochastic transition: mass flows src -> dst
    trans = sp.csr_matrix(
        (net.weight / safe[net.src], (net.dst, net.src)), shape=(n, n))
    p = np.full(n, 1.0 / n)
    base = (1.0 - damping) / n
    for _ in range(max_iter):
        nxt = base + damping * (trans @ p + p[dangling].sum() / n)
        if np.abs(nxt - p).sum() < tol:
            return nxt / nxt.sum()
        p = nxt
    raise GraphError(f"pagerank did not converge within {max_iter} iterations")


def eigencentrality(net: Network, tol: float = 1e-12, max_iter: int = 2000) -> np.ndarray:
    """Principal eigenvector of the symmetrized weighted adjacency, L2-normalised."""
    n = net.n_nodes
    if net.n_edges == 0:
        return np.zeros(n)
    w_sym = net.symmetrized_weight()
    adj = sp.csr_matrix((w_sym, (net.src, net.dst)), shape=(n, n))
    x = np.full(n, 1.0 / np.sqrt(n))
    for _ in range(max_iter):
        nxt = adj @ x
        norm = np.linalg.norm(nxt)
        if norm == 0:
            return np.zeros(n)
        nxt /= norm
        if np.abs(nxt - x).max() < tol:
            return nxt
        x = nxt
    raise GraphError(f"eigencentrality did not converge within {max_iter} iterations")


def local_transitivity(net: Network) -> np.ndarray:
    """Local clustering coefficient on the undirected simple graph."""
    n = net.n_nodes
    coef = np.zeros(n)
    mark = np.zeros(n, dtype=bool)
    indptr, nbrs = net.out_indptr, net.dst
    for v in range(n):
        s, e = indptr[v], indptr[v + 1]
        k = e - s
        if k < 2:
            continue
        nv = nbrs[s:e]
        mark[nv] = True
        links = 0
        for u in nv:
            links += int(mark[nbrs[indptr[u]:indptr[u + 1]]].sum())
        mark[nv] = False
        coef[v] = links / (k * (k - 1))
    return coef


def _csr_from_edges(n, src, dst, w):
    order = np.lexsort((dst, src))
    src, dst, w = src[order], dst[order], w[order]
    counts = np.bincount(src, minlength=n)
    indptr = np.concatenate(([0], np.cumsum(counts))).astype(np.int64)
    return indptr, dst, w


def louvain_communities(net: Network, rng_seed: int = 0, *, resolution: float = 1.0,
                        min_gain: float = 1e-12) -> np.ndarray:
    """Louvain modularity optimisation with seeded node ordering.

    Runs on the undirected graph with symmetrized weights. Ties between
    equal-gain target communities break toward the smaller community label,
    so results are reproducible for a given seed.
    """
    rng = make_rng(rng_seed)
    n = net.n_nodes
    w_sym = net.symmetrized_weight()
    indptr, nbrs, w = _csr_from_edges(n, net.src.copy(), net.dst.copy(), w_sym)
    self_w = np.zeros(n)
    labels = np.arange(n, dtype=np.int64)  # community of each original node

    while True:
        n_cur = len(indptr) - 1
        strength = np.zeros(n_cur)
        np.add.at(strength, np.repeat(np.arange(n_cur), np.diff(indptr)), w)
        strength += 2.0 * self_w
        two_m = strength.sum()
        if two_m == 0:
            break
        comm = np.arange(n_cur, dtype=np.int64)
        comm_tot = strength.copy()

        improved_level = False
        moved = True
        scratch = np.zeros(n_cur)
        while moved:
            moved = False
            for v in rng.permutation(n_cur):
                s, e = indptr[v], indptr[v + 1]
                nv, wv = nbrs[s:e], w[s:e]
                cv = comm[v]
                touched = np.unique(comm[nv]) if len(nv) else np.empty(0, dtype=np.int64)
                np.add.at(scratch, comm[nv], wv)
                k_v = strength[v]
                comm_tot[cv] -= k_v
                best_c, best_gain = cv, scratch[cv] - resolution * comm_tot[cv] * k_v / two_m
                for c in touched:
                    if c == cv:
                        continue
                    gain = scratch[c] - resolution * comm_tot[c] * k_v / two_m
                    if gain > best_gain + min_gain or (
                            abs(gain - best_gain) <= min_gain and c < best_c):
                        best_c, best_gain = c, gain
                comm_tot[best_c] += k_v
                scratch[touched] = 0.0
                if best_c != cv:
                    comm[v] = best_c
                    moved = True
                    improved_level = True

        if not improved_level:
            break

        # Aggregate: communities become nodes of the next level.
        uniq, dense = np.unique(comm, return_inverse=True)
        labels = dense[labels]
        n_new = len(uniq)
        cs, cd = dense[np.repeat(np.arange(n_cur), np.diff(indptr))], dense[nbrs]
        inner = cs == cd
        new_self = np.zeros(n_new)
        np.add.at(new_self, cs[inner], w[inner] / 2.0)
        np.add.at(new_self, dense, self_w)
        cross = ~inner
        if cross.any():
            key = cs[cross] * n_new + cd[cross]
            uk, inv = np.unique(key, return_inverse=True)
            agg = np.zeros(len(uk))
            np.add.at(agg, inv, w[cross])
            nsrc, ndst = uk // n_new, uk % n_new
        else:
            nsrc = ndst = np.empty(0, dtype=np.int64)
            agg = np.empty(0)
        indptr, nbrs, w = _csr_from_edges(n_new, nsrc, ndst, agg)
        self_w = new_self
        if n_new == n_cur:
            break

    # Dense relabel in first-appearance order for stable output.
    _, dense = np.unique(labels, return_inverse=True)
    first = {}
    out = np.empty(n, dtype=np.int64)
    for i, c in enumerate(dense):
        if c not in first:
            first[c] = len(first)
        out[i] = first[c]
    return out


def modularity(net: Network, labels) -> float:
    """Newman modularity of a node partition on the symmetrized weighted graph."""
    labels = np.asarray(labels)
    w_sym = net.symmetrized_weight()
    strength = np.zeros(net.n_nodes)
    np.add.at(strength, net.src, w_sym)
    two_m = strength.sum()
    if two_m == 0:
        return 0.0
    inner = labels[net.src] == labels[net.dst]
    q_in = w_sym[inner].sum() / two_m
    tot = np.zeros(labels.max() + 1)
    np.add.at(tot, labels, strength)
    return q_in - ((tot / two_m) ** 2).sum()


@dataclass
class NodePositionFeatures:
    """Per-node structural position arrays used by metric M10."""
    pagerank: np.ndarray
    eigencentrality: np.ndarray
    transitivity: np.ndarray
    community: np.ndarray

    def as_matrix(self) -> np.ndarray:
        return np.column_stack(
            [self.pagerank, self.eigencentrality, self.transitivity, self.community])


def node_position_features(net: Network, damping: float = 0.85, tol: float = 1e-10,
                           rng_seed: int = 0) -> NodePositionFeatures:
    pr = pagerank(net, damping=damping, tol=tol)
    assert abs(pr.sum() - 1.0) < 1e-9
    return NodePositionFeatures(
        pagerank=pr,
        eigencentrality=eigencentrality(net),
        transitivity=local_transitivity(net),
        community=louvain_communities(net, rng_seed=rng_seed),
    )


# ---------------------------------------------------------------------------
# Cascade-facing structural measures
# ---------------------------------------------------------------------------

def bfs_hops(net: Network, sources) -> np.ndarray:
    """Unweighted undirected hop distance from the source set; -1 if unreachable."""
    sources = np.asarray(sources, dtype=np.int64)
    if len(sources) == 0:
        raise GraphError("empty source set")
    if sources.min() < 0 or sources.max() >= net.n_nodes:
        raise GraphError("source node out of range")
    dist = np.full(net.n_nodes, -1, dtype=np.int64)
    frontier = np.unique(sources)
    dist[frontier] = 0
    d = 0
    while len(frontier):
        d += 1
        nxt, _ = _gather_rows(net.out_indptr, net.dst, frontier)
        nxt = np.unique(nxt)
        nxt = nxt[dist[nxt] < 0]
        dist[nxt] = d
        frontier = nxt
    return dist


def nearest_seed_distances(net: Network, adopters, seeds):
    """Hop count from each adopter to its closest seed on the undirected graph.

    Returns ``(distances, reachable)`` aligned with ``adopters``; unreachable
    adopters get distance -1 and a False flag (excluded from the M3 mean).
    """
    adopters = np.asarray(adopters, dtype=np.int64)
    if len(adopters) and (adopters.min() < 0 or adopters.max() >= net.n_nodes):
        raise GraphError("adopter node out of range")
    dist = bfs_hops(net, seeds)
    d = dist[adopters]
    return d, d >= 0


def adopter_edge_density(net: Network, adopters) -> float:
    """Directed edges among adopters divided by |A|(|A|-1)."""
    adopters = np.unique(np.asarray(adopters, dtype=np.int64))
    k = len(adopters)
    if k < 2:
        raise GraphError("edge density needs at least 2 adopters")
    if adopters.min() < 0 or adopters.max() >= net.n_nodes:
        raise GraphError("adopter node out of range")
    mask = np.zeros(net.n_nodes, dtype=bool)
    mask[adopters] = True
    targets, _ = _gather_rows(net.out_indptr, net.dst, adopters)
    return float(mask[targets].sum()) / (k * (k - 1))
