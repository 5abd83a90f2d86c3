"""Synthetic-world generation and every file format the tool reads or writes.

A world bundles the network, the identity matrix, and the region map. The
synthetic generator plants controllable structure (block communities,
identity homophily, a region grid) so that every mechanism in the simulator
has a substrate with known ground truth.
"""

from __future__ import annotations

import configparser
import hashlib
import json
import warnings
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .engine import (IDENTITY_ONLY, Cascade, SimulationConfig, run_simulation)
from .graph import (Network, load_edge_list, load_node_map,
                    rewire_configuration_model, save_edge_list)
from .identity import (CategorySchema, HashtagSpec, IdentityMatrix,
                       infer_hashtag_identity, load_identity_csv, save_identity_csv)
from .metrics import RegionMap
from .rng import derive_seed, make_rng


class WorldError(ValueError):
    pass


@dataclass
class World:
    net: Network
    ids: IdentityMatrix
    regions: RegionMap
    coords: np.ndarray | None = None  # optional (lat, lon) per node


def default_schema() -> CategorySchema:
    return CategorySchema([
        ("community", ["com_a", "com_b", "com_c", "com_d"]),
        ("interest", ["int_a", "int_b", "int_c"]),
        ("language", ["lang_a", "lang_b", "lang_c"]),
    ])


@dataclass
class SynthWorldParams:
    blocks: int = 4
    nodes_per_block: int = 250
    intra_p: float = 0.05
    inter_p: float = 0.005
    homophily: float = 0.5
    identity_concentration: float = 20.0
    region_grid: tuple[int, int] = (2, 2)
    rng_seed: int = 0
    schema: CategorySchema | None = None

    def __post_init__(self):
        if self.blocks < 1 or self.nodes_per_block < 1:
            raise WorldError("blocks and nodes_per_block must be >= 1")
        for p in (self.intra_p, self.inter_p):
            if not (0 <= p <= 1):
                raise WorldError("edge probabilities must lie in [0,1]")
        if not (0 <= self.homophily <= 1):
            raise WorldError("homophily must lie in [0,1]")
        if self.identity_concentration <= 0:
            raise WorldError("identity_concentration must be positive")
        if self.region_grid[0] < 1 or self.region_grid[1] < 1:
            raise WorldError("region grid must be at least 1x1")


def _sample_block_pairs(rng, size_a, size_b, offset_a, offset_b, p, same_block):
    """Candidate unordered pairs between two blocks at rate p (with-replacement
    draw then dedupe; collisions are negligible at simulation densities)."""
    n_pairs = size_a * (size_a - 1) // 2 if same_block else size_a * size_b
    if n_pairs == 0 or p <= 0:
        return np.empty(0, np.int64), np.empty(0, np.int64)
    m = rng.binomial(n_pairs, min(1.0, p))
    if m == 0:
        return np.empty(0, np.int64), np.empty(0, np.int64)
    if same_block:
        u = offset_a + rng.integers(0, size_a, size=2 * m)
        v = offset_a + rng.integers(0, size_a, size=2 * m)
        keep = u != v
        u, v = u[keep][:m], v[keep][:m]
    else:
        u = offset_a + rng.integers(0, size_a, size=m)
        v = offset_b + rng.integers(0, size_b, size=m)
    lo, hi = np.minimum(u, v), np.maximum(u, v)
    key = np.unique(lo.astype(np.int64) * (1 << 32) + hi)
    return (key >> 32).astype(np.int64), (key & 0xFFFFFFFF).astype(np.int64)


def generate_world(params: SynthWorldParams) -> World:
    """Stochastic block model with reciprocal weighted edges, block-correlated
    identities, and blocks tiled onto a region grid.

    The homophily parameter interpolates each candidate edge's keep
    probability between identity-independent (h=0, exactly the block rates)
    and identity-matched (h=1, proportional to identity similarity).
    """
    rng = make_rng(params.rng_seed)
    schema = params.schema or default_schema()
    n_blocks, per = params.blocks, params.nodes_per_block
    n = n_blocks * per
    node_ids = [f"u{i:06d}" for i in range(n)]
    block_of = np.repeat(np.arange(n_blocks), per)

    # Identities: per block and category, agents draw around a Dirichlet
    # centre; concentration -> infinity collapses a block to one vector.
    values = np.empty((n, schema.dimension))
    col = 0
    for _, regs in schema.categories:
        d = len(regs)
        for b in range(n_blocks):
            center = rng.dirichlet(np.ones(d))
            alpha = center * params.identity_concentration + 1e-3
            rows = slice(b * per, (b + 1) * per)
            values[rows, col:col + d] = rng.dirichlet(alpha, size=per)
        col += d
    ids = IdentityMatrix(np.clip(values, 0.0, 1.0), schema)

    # Edges: oversample at the h-inflated rate, then thin by identity match.
    h = params.homophily
    lo_all, hi_all = [], []
    for a in range(n_blocks):
        for b in range(a, n_blocks):
            base = params.intra_p if a == b else params.inter_p
            lo, hi = _sample_block_pairs(rng, per, per, a * per, b * per,
                                         base * (1.0 + h), a == b)
            if len(lo) == 0:
                continue
            if h > 0:
                sim = 1.0 - np.abs(ids.values[lo] - ids.values[hi]).mean(axis=1)
                accept = ((1.0 - h) + 2.0 * h * sim) / (1.0 + h)
                keep = rng.random(len(lo)) < accept
                lo, hi = lo[keep], hi[keep]
            lo_all.append(lo)
            hi_all.append(hi)
    lo = np.concatenate(lo_all) if lo_all else np.empty(0, np.int64)
    hi = np.concatenate(hi_all) if hi_all else np.empty(0, np.int64)
    w = rng.integers(1, 6, size=2 * len(lo)).astype(np.float64)
    net = Network(node_ids, np.concatenate([lo, hi]), np.concatenate([hi, lo]), w)

    _warn_if_fragmented(net)

    rows, cols = params.region_grid
    n_regions = rows * cols
    region_names = [f"r{i // cols}_{i % cols}" for i in range(n_regions)]
    region_of_block = np.arange(n_blocks) % n_regions
    weights = np.zeros((n_regions, n_regions))
    for i in range(rows):
        for j in range(cols):
            k = i * cols + j
            for di, dj in ((1, 0), (-1, 0), (0, 1), (0, -1)):
                ii, jj = i + di, j + dj
                if 0 <= ii < rows and 0 <= jj < cols:
                    weights[k, ii * cols + jj] = 1.0
    regions = RegionMap(region_of_block[block_of], region_names, weights)
    return World(net=net, ids=ids, regions=regions)


def _warn_if_fragmented(net: Network) -> None:
    import scipy.sparse as sp
    from scipy.sparse.csgraph import connected_components
    if net.n_nodes == 0:
        return
    adj = sp.csr_matrix((np.ones(net.n_edges), (net.src, net.dst)),
                        shape=(net.n_nodes, net.n_nodes))
    _, labels = connected_components(adj, directed=False)
    best = int(np.bincount(labels).max())
    if best < 0.5 * net.n_nodes:
        warnings.warn(
            f"giant component holds only {best}/{net.n_nodes} nodes", stacklevel=2)


@dataclass
class PlantedCascade:
    """Engine-generated cascade labelled with its generating ground truth."""
    spec: HashtagSpec
    cascade: Cascade
    true_variant: str
    true_stickiness: float
    rng_seed: int


def plant_cascade(world: World, tag: str, seed_ids, true_variant: str,
                  true_stickiness: float, base_cfg: SimulationConfig,
                  rng_seed: int) -> PlantedCascade:
    """Run the engine under a known variant and stickiness to create oracle data.

    The returned spec carries the inferred hashtag identity and the realised
    cascade size, ready for calibration and discrimination tests.
    """
    seed_idx = world.net.indices(seed_ids)
    dims, uh = infer_hashtag_identity(world.ids, seed_idx)
    spec = HashtagSpec(tag=tag, seeds=list(seed_ids), relevant_dims=dims,
                       hashtag_identity=uh, empirical_size=1, sample_rate=1.0)
    net = world.net
    if true_variant == IDENTITY_ONLY:
        net = rewire_configuration_model(world.net, derive_seed(rng_seed, tag, "rewire"))
    cfg = replace(base_cfg, variant=true_variant, stickiness=true_stickiness,
                  rng_seed=derive_seed(rng_seed, tag, "plant"))
    cascade = run_simulation(net, world.ids, spec, cfg)
    spec.empirical_size = cascade.n_events
    return PlantedCascade(spec=spec, cascade=cascade, true_variant=true_variant,
                          true_stickiness=true_stickiness, rng_seed=rng_seed)


# ---------------------------------------------------------------------------
# Cascade and hashtag files
# ---------------------------------------------------------------------------

def write_cascade(cascade: Cascade, net: Network, path, tag: str | None = None) -> None:
    """JSON-lines: a header record naming the seeds, then one {agent, t} per event."""
    with open(path, "w", encoding="utf-8") as fh:
        header = {"seeds": [net.node_ids[i] for i in cascade.seeds]}
        if tag is not None:
            header["tag"] = tag
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for a, t in zip(cascade.agents, cascade.times):
            fh.write(json.dumps({"agent": net.node_ids[a], "t": int(t)}) + "\n")


def read_cascade(path, net: Network):
    """Returns (cascade, tag). Raises on an empty or headerless file."""
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln for ln in (l.strip() for l in fh) if ln]
    if not lines:
        raise WorldError(f"cascade file {path} is empty")
    header = json.loads(lines[0])
    if "seeds" not in header:
        raise WorldError(f"cascade file {path} has no seed header record")
    seeds = net.indices(header["seeds"])
    agents, times = [], []
    for ln in lines[1:]:
        rec = json.loads(ln)
        agents.append(net.index(rec["agent"]))
        times.append(int(rec["t"]))
    order = np.lexsort((agents, times)) if agents else np.empty(0, np.int64)
    agents = np.asarray(agents, dtype=np.int64)[order]
    times = np.asarray(times, dtype=np.int64)[order]
    return Cascade(agents, times, seeds), header.get("tag")


@dataclass
class HashtagEntry:
    """One line of a hashtag list file: where to find the empirical cascade."""
    tag: str
    seeds: list[str] = field(default_factory=list)  # empty: first 10 adopters of the cascade
    cascade_path: str = ""
    sample_rate: float = 1.0
    topic: str = "unknown"


def write_hashtag_list(entries: list[HashtagEntry], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for e in entries:
            fh.write(json.dumps({
                "tag": e.tag, "seeds": e.seeds, "cascade": e.cascade_path,
                "sample_rate": e.sample_rate, "topic": e.topic,
            }, sort_keys=True) + "\n")


def read_hashtag_list(path) -> list[HashtagEntry]:
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for ln in fh:
            ln = ln.strip()
            if not ln:
                continue
            rec = json.loads(ln)
            out.append(HashtagEntry(
                tag=rec["tag"], seeds=list(rec.get("seeds", [])),
                cascade_path=rec.get("cascade", ""),
                sample_rate=float(rec.get("sample_rate", 1.0)),
                topic=rec.get("topic", "unknown")))
    if not out:
        raise WorldError(f"hashtag list {path} is empty")
    return out


# ---------------------------------------------------------------------------
# Region map files
# ---------------------------------------------------------------------------

def save_region_map(regions: RegionMap, node_ids, regions_path, adjacency_path) -> None:
    with open(regions_path, "w", encoding="utf-8") as fh:
        fh.write("node_id,region\n")
        for nid, r in zip(node_ids, regions.region_of_node):
            fh.write(f"{nid},{regions.region_names[r]}\n")
    with open(adjacency_path, "w", encoding="utf-8") as fh:
        fh.write("region_a,region_b,weight\n")
        for i, a in enumerate(regions.region_names):
            for j, b in enumerate(regions.region_names):
                if regions.weights[i, j] > 0:
                    fh.write(f"{a},{b},{float(regions.weights[i, j])!r}\n")


def load_region_map(regions_path, adjacency_path, node_ids) -> RegionMap:
    region_by_node = {}
    names: list[str] = []
    seen = {}
    with open(regions_path, "r", encoding="utf-8") as fh:
        next(fh)
        for ln in fh:
            nid, region = ln.strip().split(",")
            if region not in seen:
                seen[region] = len(names)
                names.append(region)
            region_by_node[nid] = seen[region]
    with open(adjacency_path, "r", encoding="utf-8") as fh:
        next(fh)
        entries = [ln.strip().split(",") for ln in fh if ln.strip()]
    for a, b, _ in entries:
        for r in (a, b):
            if r not in seen:
                seen[r] = len(names)
                names.append(r)
    weights = np.zeros((len(names), len(names)))
    for a, b, w in entries:
        weights[seen[a], seen[b]] = float(w)
    try:
        region_of_node = np.array([region_by_node[nid] for nid in node_ids])
    except KeyError as e:
        raise WorldError(f"region map is missing node {e.args[0]!r}") from None
    return RegionMap(region_of_node, names, weights)


# ---------------------------------------------------------------------------
# World directories with a content-hash manifest
# ---------------------------------------------------------------------------

WORLD_FILES = ("edges.tsv", "node_map.tsv", "identities.csv", "schema.csv",
               "regions.csv", "region_adjacency.csv")


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def save_world(world: World, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_edge_list(world.net, out / "edges.tsv", out / "node_map.tsv")
    world.ids.schema.save(out / "schema.csv")
    save_identity_csv(world.ids, world.net.node_ids, out / "identities.csv")
    save_region_map(world.regions, world.net.node_ids,
                    out / "regions.csv", out / "region_adjacency.csv")
    manifest = {
        "node_count": world.net.n_nodes,
        "edge_count": world.net.n_edges,
        "files": {name: _sha256(out / name) for name in WORLD_FILES},
    }
    with open(out / "world_manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=2)
        fh.write("\n")


def load_world(world_dir, verify: bool = True) -> World:
    d = Path(world_dir)
    manifest_path = d / "world_manifest.json"
    if verify:
        if not manifest_path.exists():
            raise WorldError(f"{world_dir} has no world_manifest.json")
        manifest = json.loads(manifest_path.read_text())
        for name, digest in manifest["files"].items():
            actual = _sha256(d / name)
            if actual != digest:
                raise WorldError(f"world file {name} hash mismatch (corrupted input?)")
    node_ids = load_node_map(d / "node_map.tsv")
    net = load_edge_list(d / "edges.tsv", node_order=node_ids)
    schema = CategorySchema.load(d / "schema.csv")
    ids = load_identity_csv(d / "identities.csv", schema, node_ids)
    regions = load_region_map(d / "regions.csv", d / "region_adjacency.csv", node_ids)
    return World(net=net, ids=ids, regions=regions)


# ---------------------------------------------------------------------------
# INI-style configs
# ---------------------------------------------------------------------------

def _coerce(kind, raw: str):
    if kind is bool:
        return raw.strip().lower() in ("1", "true", "yes", "on")
    return kind(raw)


def read_simulation_config(path, section: str = "simulation") -> SimulationConfig:
    """key=value file mirroring SimulationConfig fields."""
    cp = configparser.ConfigParser()
    if not cp.read(path):
        raise WorldError(f"cannot read config file {path}")
    if not cp.has_section(section):
        raise WorldError(f"config {path} has no [{section}] section")
    known = {f.name: f.type for f in fields(SimulationConfig)}
    types = {"stickiness": float, "decay": float, "novelty_cap": int, "variant": str,
             "max_steps": int, "stop_window": int, "stop_growth": float,
             "warmup": int, "rng_seed": int, "exposure_per_use": bool,
             "paper_literal_delta": bool, "validate": bool}
    kwargs = {}
    for key, raw in cp.items(section):
        if key not in known:
            raise WorldError(f"unknown simulation config key {key!r}")
        kwargs[key] = _coerce(types[key], raw)
    return SimulationConfig(**kwargs)


def read_world_params(path, section: str = "world") -> SynthWorldParams:
    cp = configparser.ConfigParser()
    if not cp.read(path):
        raise WorldError(f"cannot read config file {path}")
    if not cp.has_section(section):
        raise WorldError(f"config {path} has no [{section}] section")
    types = {"blocks": int, "nodes_per_block": int, "intra_p": float,
             "inter_p": float, "homophily": float, "identity_concentration": float,
             "region_rows": int, "region_cols": int, "rng_seed": int}
    vals = {}
    for key, raw in cp.items(section):
        if key not in types:
            raise WorldError(f"unknown world config key {key!r}")
        vals[key] = _coerce(types[key], raw)
    grid = (vals.pop("region_rows", 2), vals.pop("region_cols", 2))
    return SynthWorldParams(region_grid=grid, **vals)


def read_experiment_manifest(path, section: str = "experiment") -> dict:
    """Optional [experiment] section: world/hashtag paths and run counts that
    the trial and select commands use as defaults for omitted flags."""
    cp = configparser.ConfigParser()
    if not cp.read(path):
        raise WorldError(f"cannot read config file {path}")
    if not cp.has_section(section):
        return {}
    types = {"world": str, "hashtags": str, "models": str, "runs": int,
             "folds": int, "repeats": int, "seed": int, "jobs": int,
             "m7": str}
    out = {}
    for key, raw in cp.items(section):
        if key not in types:
            raise WorldError(f"unknown experiment config key {key!r}")
        out[key] = _coerce(types[key], raw)
    return out
