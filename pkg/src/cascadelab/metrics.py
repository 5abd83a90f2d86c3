"""The ten cascade-comparison measures and their shared primitives.

Popularity: M1 usage (log-ratio), M2 unique adopters (log-ratio), M3 nearest-seed
distance (relative error). Growth: M4 adoption-curve DTW, M5 uses per adopter,
M6 adopter edge density, M7 size prediction from early adopters. Adopters:
M8 identity propensity KL, M9 regional Lee's L, M10 network-position propensity
KL. Comparisons for M2-M10 run on cascades downsampled to equal event counts,
so no measure rewards size calibration twice.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from sklearn.linear_model import LogisticRegression, Ridge
from sklearn.neural_network import MLPRegressor

from .engine import Cascade, apply_stop_rule
from .graph import (Network, NodePositionFeatures, adopter_edge_density,
                    nearest_seed_distances, node_position_features)
from .identity import HashtagSpec, IdentityMatrix
from .rng import make_rng

METRIC_NAMES = ("m1", "m2", "m3", "m4", "m5", "m6", "m7", "m8", "m9", "m10")
N_METRICS = 10


class MetricError(ValueError):
    pass


@dataclass
class MetricVector:
    """Raw comparison values m1..m10 with per-metric validity flags."""
    values: np.ndarray
    valid: np.ndarray
    hashtag: str = ""
    model: str = ""
    run: int = 0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.valid = np.asarray(self.valid, dtype=bool)
        if self.values.shape != (N_METRICS,) or self.valid.shape != (N_METRICS,):
            raise MetricError("metric vector must have exactly 10 entries")

    def __getattr__(self, name):
        if name in METRIC_NAMES:
            return float(self.values[METRIC_NAMES.index(name)])
        raise AttributeError(name)

    def flags(self) -> str:
        return "".join("1" if v else "0" for v in self.valid)


@dataclass
class RegionMap:
    """Node-to-region assignment plus a row-standardizable spatial weight matrix."""
    region_of_node: np.ndarray
    region_names: list[str]
    weights: np.ndarray

    def __post_init__(self):
        self.region_of_node = np.asarray(self.region_of_node, dtype=np.int64)
        self.weights = np.asarray(self.weights, dtype=np.float64)
        r = len(self.region_names)
        if self.weights.shape != (r, r):
            raise MetricError("region weights must be square over the region list")
        if (self.weights < 0).any():
            raise MetricError("region weights must be non-negative")
        if len(self.region_of_node) and (
                self.region_of_node.min() < 0 or self.region_of_node.max() >= r):
            raise MetricError("every node must map to a listed region")

    @property
    def n_regions(self) -> int:
        return len(self.region_names)

    def populations(self) -> np.ndarray:
        return np.bincount(self.region_of_node, minlength=self.n_regions)


# ---------------------------------------------------------------------------
# Primitives
# ---------------------------------------------------------------------------

def log_ratio_error(sim_count, emp_count, sample_rate: float = 1.0) -> float:
    """|log10(sim * rate / emp)|: symmetric in over- vs under-shoot magnitude."""
    if sim_count <= 0 or emp_count <= 0:
        raise MetricError("log-ratio error needs positive counts")
    return abs(math.log10(sim_count * sample_rate / emp_count))


def relative_error(sim_value: float, emp_value: float) -> float:
    if emp_value == 0:
        raise MetricError("relative error is undefined for a zero empirical value")
    return abs(sim_value - emp_value) / abs(emp_value)


def dtw_distance(a, b) -> float:
    """Classic dynamic time warping with absolute-difference cost, full window."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if len(a) == 0 or len(b) == 0:
        raise MetricError("DTW needs two non-empty sequences")
    n, m = len(a), len(b)
    prev = np.full(m + 1, np.inf)
    prev[0] = 0.0
    for i in range(1, n + 1):
        cur = np.full(m + 1, np.inf)
        cost = np.abs(a[i - 1] - b)
        for j in range(1, m + 1):
            cur[j] = cost[j - 1] + min(prev[j], cur[j - 1], prev[j - 1])
        prev = cur
    return float(prev[m])


def histogram_kl(scores_emp, scores_sim, bins: int, smoothing: float = 1e-6) -> float:
    """KL(empirical || simulated) over equal-width score bins on [0,1]."""
    edges = np.linspace(0.0, 1.0, bins + 1)
    p = np.histogram(scores_emp, bins=edges)[0].astype(float) + smoothing
    q = np.histogram(scores_sim, bins=edges)[0].astype(float) + smoothing
    p /= p.sum()
    q /= q.sum()
    return float(np.sum(p * np.log(p / q)))


def propensity_kl(features_emp, features_sim, bins: int = 20, *,
                  smoothing: float = 1e-6) -> float:
    """KL divergence between the two sides' propensity-score distributions.

    A regularized logistic regression of side membership (1 = simulated) on
    the feature rows collapses multivariate composition to one score per row;
    rows shared by both cascades appear once per side and cancel. Features
    are expected standardized by the caller.
    """
    features_emp = np.atleast_2d(np.asarray(features_emp, dtype=np.float64))
    features_sim = np.atleast_2d(np.asarray(features_sim, dtype=np.float64))
    if len(features_emp) < 2 or len(features_sim) < 2:
        raise MetricError("propensity KL needs at least 2 rows per side")
    x = np.vstack([features_emp, features_sim])
    y = np.concatenate([np.zeros(len(features_emp)), np.ones(len(features_sim))])
    model = LogisticRegression(C=1.0, max_iter=1000)
    model.fit(x, y)
    scores = model.predict_proba(x)[:, 1]
    return histogram_kl(scores[y == 0], scores[y == 1], bins, smoothing)


def row_standardize(weights: np.ndarray) -> np.ndarray:
    w = np.asarray(weights, dtype=np.float64)
    sums = w.sum(axis=1, keepdims=True)
    safe = np.where(sums == 0, 1.0, sums)
    return w / safe


def lee_l(x, y, weights) -> float:
    """Lee's L spatial cross-correlation of two regional variables.

    With an identity weight matrix this reduces to the Pearson correlation.
    The caller supplies a row-standardized W.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64)
    n = len(x)
    if n < 2 or len(y) != n or w.shape != (n, n):
        raise MetricError("Lee's L needs matched x, y, and square W over >= 2 regions")
    xc = x - x.mean()
    yc = y - y.mean()
    sx2 = (xc ** 2).sum()
    sy2 = (yc ** 2).sum()
    if sx2 == 0 or sy2 == 0:
        raise MetricError("Lee's L is undefined under zero variance")
    lag_x = w @ xc
    lag_y = w @ yc
    scale = n / (w.sum(axis=1) ** 2).sum()
    return float(scale * (lag_x * lag_y).sum() / (math.sqrt(sx2) * math.sqrt(sy2)))


# ---------------------------------------------------------------------------
# Cascade preparation
# ---------------------------------------------------------------------------

def downsample_cascade(cascade: Cascade, k: int, rng) -> Cascade:
    """Uniform event sample without replacement down to k events; smaller or
    equal cascades pass through untouched."""
    if cascade.n_events <= k:
        return cascade
    keep = np.sort(rng.choice(cascade.n_events, size=k, replace=False))
    return Cascade(cascade.agents[keep], cascade.times[keep], cascade.seeds)


def truncate_tail(counts: np.ndarray, warmup: int = 100, window: int = 10,
                  growth: float = 0.01) -> np.ndarray:
    """Cut an adoption series where the engine's stopping rule would have halted."""
    counts = np.asarray(counts)
    cum = np.cumsum(counts)
    stop = apply_stop_rule(cum, warmup, window, growth)
    return counts if stop is None else counts[: stop + 1]


def rebin_counts(counts: np.ndarray, t_bins: int) -> np.ndarray:
    """Aggregate a per-unit count series into t_bins evenly spaced intervals."""
    counts = np.asarray(counts, dtype=np.float64)
    if t_bins < 1 or len(counts) == 0:
        raise MetricError("rebinned curve needs at least one interval")
    idx = (np.arange(len(counts)) * t_bins) // len(counts)
    out = np.zeros(t_bins)
    np.add.at(out, idx, counts)
    return out


def standardize_features(*blocks):
    """Z-score feature blocks jointly (zero-variance columns pass through)."""
    stacked = np.vstack(blocks)
    mu = stacked.mean(axis=0)
    sd = stacked.std(axis=0)
    sd = np.where(sd == 0, 1.0, sd)
    return tuple((b - mu) / sd for b in blocks)


# ---------------------------------------------------------------------------
# M7: growth predictivity
# ---------------------------------------------------------------------------

def early_adopter_features(cascade: Cascade, net: Network, ids: IdentityMatrix,
                           n_early: int = 100) -> np.ndarray:
    """Feature row for the size regressor from the first ``n_early`` adopters.

    Three padded/truncated blocks of width n_early (first-use timesteps,
    full-network degree, adopter-subgraph degree) plus per-register mean and
    std of the early adopters' identities. The paper's demographic-inference
    features are out of scope; identity summaries stand in for them.
    """
    agents, times = cascade.first_usages()
    early = agents[:n_early]
    early_t = times[:n_early]

    def pad(v):
        out = np.zeros(n_early)
        out[: len(v)] = v
        return out

    adopters = cascade.adopters()
    mask = np.zeros(net.n_nodes, dtype=bool)
    mask[adopters] = True
    sub_deg = np.empty(len(early))
    for k, a in enumerate(early):
        nbrs, _ = net.out_neighbors(a)
        sub_deg[k] = mask[nbrs].sum()

    ident = ids.values[early]
    return np.concatenate([
        pad(early_t), pad(net.degree[early]), pad(sub_deg),
        ident.mean(axis=0), ident.std(axis=0),
    ])


class CascadeSizeRegressor:
    """Predicts final cascade size from early-adopter features.

    One hidden layer of rectified units trained with the adam optimizer by
    default; ``model="ridge"`` switches to a regularized linear fit for
    deterministic tests. Trained once per experiment and shared read-only.
    """

    def __init__(self, model: str = "mlp", hidden_units: int = 100,
                 rng_seed: int = 0, max_iter: int = 800):
        if model not in ("mlp", "ridge"):
            raise MetricError(f"unknown regressor model {model!r}")
        self.model_kind = model
        self.hidden_units = hidden_units
        self.rng_seed = rng_seed
        self.max_iter = max_iter
        self._model = None
        self._mu = None
        self._sd = None

    def fit(self, features, sizes) -> "CascadeSizeRegressor":
        x = np.atleast_2d(np.asarray(features, dtype=np.float64))
        y = np.asarray(sizes, dtype=np.float64)
        self._mu = x.mean(axis=0)
        sd = x.std(axis=0)
        self._sd = np.where(sd == 0, 1.0, sd)
        xs = (x - self._mu) / self._sd
        # targets are standardized too: cascade sizes span orders of magnitude
        # and adam stalls on raw-scale outputs
        self._y_mu = y.mean()
        self._y_sd = y.std() or 1.0
        ys = (y - self._y_mu) / self._y_sd
        if self.model_kind == "mlp":
            self._model = MLPRegressor(hidden_layer_sizes=(self.hidden_units,),
                                       activation="relu", solver="adam",
                                       random_state=self.rng_seed,
                                       max_iter=self.max_iter)
        else:
            self._model = Ridge(alpha=1.0)
        self._model.fit(xs, ys)
        return self

    def predict(self, features) -> np.ndarray:
        if self._model is None:
            raise MetricError("size regressor is not fitted")
        x = np.atleast_2d(np.asarray(features, dtype=np.float64))
        z = self._model.predict((x - self._mu) / self._sd)
        return z * self._y_sd + self._y_mu


# ---------------------------------------------------------------------------
# The full vector
# ---------------------------------------------------------------------------

@dataclass
class MetricContext:
    """Shared world data for metric evaluation. Node position features are
    computed once on first use and cached on the context."""
    net: Network
    ids: IdentityMatrix
    regions: RegionMap | None
    spec: HashtagSpec
    rng_seed: int = 0
    node_features: NodePositionFeatures | None = None
    size_regressor: CascadeSizeRegressor | None = None
    kl_bins: int = 20
    curve_warmup: int = 100
    curve_window: int = 10
    curve_growth: float = 0.01

    def position_features(self) -> NodePositionFeatures:
        if self.node_features is None:
            self.node_features = node_position_features(self.net, rng_seed=self.rng_seed)
        return self.node_features


def _seed_majority_community(community: np.ndarray, seed_idx: np.ndarray) -> int:
    return int(np.bincount(community[seed_idx]).argmax())


def compute_metrics(sim: Cascade, emp: Cascade, ctx: MetricContext) -> MetricVector:
    """All ten comparisons between one simulated and one empirical cascade.

    Metrics that are undefined for the pair (too few adopters, zero counts,
    degenerate fits) are flagged invalid rather than aborting the vector.
    """
    if sim.n_events == 0 or emp.n_events == 0:
        raise MetricError("both cascades must be non-empty")
    values = np.zeros(N_METRICS)
    valid = np.zeros(N_METRICS, dtype=bool)

    def put(k, fn):
        try:
            values[k] = fn()
            valid[k] = np.isfinite(values[k])
        except (ValueError, FloatingPointError):
            values[k] = np.nan
            valid[k] = False

    seed_idx = ctx.net.indices(ctx.spec.seeds)
    rng = make_rng(ctx.rng_seed)
    k = min(sim.n_events, emp.n_events)
    sim_d = downsample_cascade(sim, k, rng)
    emp_d = downsample_cascade(emp, k, rng)
    sim_a = sim_d.adopters()
    emp_a = emp_d.adopters()

    put(0, lambda: log_ratio_error(sim.n_events, emp.n_events, ctx.spec.sample_rate))
    put(1, lambda: log_ratio_error(len(sim_a), len(emp_a), 1.0))

    def m3():
        d_s, ok_s = nearest_seed_distances(ctx.net, sim_a, seed_idx)
        d_e, ok_e = nearest_seed_distances(ctx.net, emp_a, seed_idx)
        if not ok_s.any() or not ok_e.any():
            raise MetricError("no adopter is reachable from any seed")
        return relative_error(d_s[ok_s].mean(), d_e[ok_e].mean())
    put(2, m3)

    def m4():
        sim_counts = sim_d.counts_per_step()
        emp_counts = truncate_tail(emp_d.counts_per_step(), ctx.curve_warmup,
                                   ctx.curve_window, ctx.curve_growth)
        t_bins = min(len(sim_counts), len(emp_counts))
        return dtw_distance(rebin_counts(sim_counts, t_bins),
                            rebin_counts(emp_counts, t_bins))
    put(3, m4)

    put(4, lambda: relative_error(sim_d.n_events / len(sim_a),
                                  emp_d.n_events / len(emp_a)))
    put(5, lambda: log_ratio_error(adopter_edge_density(ctx.net, sim_a),
                                   adopter_edge_density(ctx.net, emp_a), 1.0))

    def m7():
        if ctx.size_regressor is None:
            raise MetricError("no corpus-trained size regressor in context")
        feat = early_adopter_features(sim_d, ctx.net, ctx.ids)
        pred = float(ctx.size_regressor.predict(feat)[0])
        return relative_error(pred, emp.n_events)
    put(6, m7)

    def m8():
        f_emp, f_sim = standardize_features(ctx.ids.values[emp_a], ctx.ids.values[sim_a])
        return propensity_kl(f_emp, f_sim, ctx.kl_bins)
    put(7, m8)

    def m9():
        if ctx.regions is None:
            raise MetricError("no region map in context")
        pops = ctx.regions.populations()
        r = ctx.regions.n_regions

        def frac(adopters):
            cnt = np.bincount(ctx.regions.region_of_node[adopters], minlength=r)
            return (cnt + 0.5) / (pops + 1.0)
        return lee_l(frac(sim_a), frac(emp_a), row_standardize(ctx.regions.weights))
    put(8, m9)

    def m10():
        pos = ctx.position_features()
        majority = _seed_majority_community(pos.community, seed_idx)

        def rows(adopters):
            return np.column_stack([
                pos.pagerank[adopters], pos.eigencentrality[adopters],
                pos.transitivity[adopters],
                (pos.community[adopters] == majority).astype(float),
            ])
        f_emp, f_sim = standardize_features(rows(emp_a), rows(sim_a))
        return propensity_kl(f_emp, f_sim, ctx.kl_bins)
    put(9, m10)

    return MetricVector(values=values, valid=valid, hashtag=ctx.spec.tag)
