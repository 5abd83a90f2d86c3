"""Trial orchestration, covariate extraction, the interaction regression,
and the optimal / predicted combined models.

A trial takes one hashtag through the full protocol for each mechanism:
calibrate stickiness once, simulate five times at the fitted value, and score
every run against the empirical cascade. Identity-only runs receive a fresh
configuration-model rewiring of the network, shared across that trial's runs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import qr
from scipy.stats import spearmanr
from sklearn.ensemble import RandomForestClassifier
from sklearn.model_selection import KFold

from .calibrate import CalibrationResult, fit_stickiness
from .cmi import CmiBatch, compose_cmi
from .engine import (IDENTITY_ONLY, NETWORK_IDENTITY, NETWORK_ONLY, Cascade,
                     SimulationConfig, build_delta_caches, run_simulation)
from .graph import NodePositionFeatures, node_position_features, \
    rewire_configuration_model
from .identity import HashtagSpec, infer_hashtag_identity, seed_similarity
from .metrics import (CascadeSizeRegressor, MetricContext, MetricVector,
                      compute_metrics, early_adopter_features)
from .rng import derive_seed
from .worldio import World

MODELS = (NETWORK_IDENTITY, NETWORK_ONLY, IDENTITY_ONLY)


class ExperimentError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Empirical-cascade preparation
# ---------------------------------------------------------------------------

def detect_initial_adopters(usage, min_burst: int, max_gap, seed_count: int = 10):
    """Cascade start time and seed users from a raw usage log.

    ``usage`` is a time-sorted list of (agent, timestamp). Contiguous-usage
    periods are maximal runs whose inter-event gaps stay under ``max_gap``;
    the cascade starts at the first period with at least ``min_burst`` events,
    and the seeds are the first ``seed_count`` distinct adopters from that
    point on.
    """
    if not usage:
        raise ExperimentError("empty usage log")
    times = np.array([t for _, t in usage], dtype=np.float64)
    if (np.diff(times) < 0).any():
        raise ExperimentError("usage log must be time-sorted")
    breaks = np.flatnonzero(np.diff(times) >= max_gap)
    starts = np.concatenate(([0], breaks + 1))
    ends = np.concatenate((breaks + 1, [len(times)]))
    for s, e in zip(starts, ends):
        if e - s >= min_burst:
            start_time = times[s]
            seeds = []
            for agent, t in usage[s:]:
                if t < start_time:
                    continue
                if agent not in seeds:
                    seeds.append(agent)
                if len(seeds) == seed_count:
                    break
            return start_time, seeds
    raise ExperimentError(
        f"no contiguous period reaches {min_burst} uses: no cascade start")


def semantic_covariates(embeddings: dict, freq_series: dict, tag: str,
                        threshold: float = 0.3):
    """Communicative-need covariates from caller-supplied embeddings.

    Sparsity counts other tokens whose embedding cosine similarity to the tag
    reaches the threshold; growth is the Spearman rank correlation between
    those tokens' summed monthly frequency and the month index (0.0 when no
    token qualifies or the series is constant).
    """
    if tag not in embeddings:
        raise ExperimentError(f"tag {tag!r} missing from the embedding table")
    ref = np.asarray(embeddings[tag], dtype=np.float64)
    ref_n = np.linalg.norm(ref)
    similar = []
    for tok, vec in embeddings.items():
        if tok == tag:
            continue
        vec = np.asarray(vec, dtype=np.float64)
        denom = ref_n * np.linalg.norm(vec)
        if denom > 0 and float(ref @ vec) / denom >= threshold:
            similar.append(tok)
    sparsity = len(similar)
    series = None
    for tok in similar:
        if tok in freq_series:
            s = np.asarray(freq_series[tok], dtype=np.float64)
            series = s if series is None else series + s
    if series is None or len(series) < 2:
        return sparsity, 0.0
    rho = spearmanr(series, np.arange(len(series))).statistic
    return sparsity, 0.0 if not np.isfinite(rho) else float(rho)


# ---------------------------------------------------------------------------
# Covariates
# ---------------------------------------------------------------------------

EARTH_RADIUS_KM = 6371.0088


def great_circle_km(lat1, lon1, lat2, lon2) -> float:
    p1, p2 = math.radians(lat1), math.radians(lat2)
    dp = p2 - p1
    dl = math.radians(lon2 - lon1)
    a = math.sin(dp / 2) ** 2 + math.cos(p1) * math.cos(p2) * math.sin(dl / 2) ** 2
    return 2 * EARTH_RADIUS_KM * math.asin(math.sqrt(a))


@dataclass
class CovariateRow:
    """Per-hashtag context features; everything derivable from the first ten uses."""
    hashtag: str
    topic: str
    semantic_sparsity: int
    semantic_growth: float
    seed_similarity: dict[str, float]
    seed_proximity: float
    median_seed_eigencentrality: float

    def numeric(self, categories: list[str]) -> np.ndarray:
        vals = [self.semantic_sparsity, self.semantic_growth]
        vals += [self.seed_similarity[c] for c in categories]
        vals += [self.seed_proximity, self.median_seed_eigencentrality]
        return np.array(vals, dtype=np.float64)


def covariate_names(categories: list[str]) -> list[str]:
    return (["semantic_sparsity", "semantic_growth"]
            + [f"sim_{c}" for c in categories]
            + ["seed_proximity", "median_seed_eigencentrality"])


def _region_hop_matrix(weights: np.ndarray) -> np.ndarray:
    """All-pairs hop counts on the region adjacency graph (BFS per region)."""
    r = len(weights)
    adj = [np.flatnonzero(weights[i] > 0) for i in range(r)]
    hops = np.full((r, r), -1, dtype=np.int64)
    for s in range(r):
        hops[s, s] = 0
        frontier = [s]
        d = 0
        while frontier:
            d += 1
            nxt = []
            for u in frontier:
                for v in adj[u]:
                    if hops[s, v] < 0:
                        hops[s, v] = d
                        nxt.append(v)
            frontier = nxt
    return hops


def seed_proximity(world: World, seed_idx: np.ndarray) -> float:
    """Mean pairwise great-circle distance when coordinates exist, else mean
    pairwise hop distance between the seeds' regions."""
    if len(seed_idx) < 2:
        return 0.0
    if world.coords is not None:
        total, pairs = 0.0, 0
        for a in range(len(seed_idx)):
            for b in range(a + 1, len(seed_idx)):
                la, lo = world.coords[seed_idx[a]]
                lb, lo2 = world.coords[seed_idx[b]]
                total += great_circle_km(la, lo, lb, lo2)
                pairs += 1
        return total / pairs
    hops = _region_hop_matrix(world.regions.weights)
    regs = world.regions.region_of_node[seed_idx]
    total, pairs = 0.0, 0
    for a in range(len(regs)):
        for b in range(a + 1, len(regs)):
            h = hops[regs[a], regs[b]]
            if h >= 0:
                total += h
                pairs += 1
    return total / pairs if pairs else 0.0


def build_covariate_row(world: World, task: "HashtagTask",
                        node_features: NodePositionFeatures, *,
                        embeddings: dict | None = None,
                        freq_series: dict | None = None,
                        similarity_threshold: float = 0.3) -> CovariateRow:
    seed_idx = world.net.indices(task.spec.seeds)
    sims = {}
    for cat, _ in world.ids.schema.categories:
        sims[cat] = (seed_similarity(world.ids, seed_idx, cat)
                     if len(seed_idx) >= 2 else 1.0)
    sparsity, growth = 0, 0.0
    if embeddings is not None and task.spec.tag in embeddings:
        sparsity, growth = semantic_covariates(
            embeddings, freq_series or {}, task.spec.tag, similarity_threshold)
    return CovariateRow(
        hashtag=task.spec.tag,
        topic=task.topic,
        semantic_sparsity=sparsity,
        semantic_growth=growth,
        seed_similarity=sims,
        seed_proximity=seed_proximity(world, seed_idx),
        median_seed_eigencentrality=float(
            np.median(node_features.eigencentrality[seed_idx])),
    )


# ---------------------------------------------------------------------------
# Trials
# ---------------------------------------------------------------------------

@dataclass
class HashtagTask:
    """One hashtag's spec plus its empirical cascade (and optional topic label)."""
    spec: HashtagSpec
    empirical: Cascade
    topic: str = "unknown"


def make_task(world: World, tag: str, empirical: Cascade, *, seeds=None,
              sample_rate: float = 1.0, topic: str = "unknown",
              percentile: float = 0.75) -> HashtagTask:
    """Build a task from an empirical cascade: seeds default to the first ten
    distinct adopters, and the hashtag identity is inferred from them."""
    if empirical.n_events == 0:
        raise ExperimentError(f"empirical cascade for {tag!r} is empty")
    if seeds is None:
        agents, _ = empirical.first_usages()
        seeds = [world.net.node_ids[a] for a in agents[:10]]
    seed_idx = world.net.indices(seeds)
    dims, uh = infer_hashtag_identity(world.ids, seed_idx, percentile)
    spec = HashtagSpec(tag=tag, seeds=list(seeds), relevant_dims=dims,
                       hashtag_identity=uh, empirical_size=empirical.n_events,
                       sample_rate=sample_rate)
    return HashtagTask(spec=spec, empirical=empirical, topic=topic)


@dataclass
class TrialResult:
    hashtag: str
    calibrations: dict[str, CalibrationResult]
    cascades: dict[str, list[Cascade]]
    vectors: list[MetricVector]
    failures: dict[str, str] = field(default_factory=dict)


def run_trial(world: World, task: HashtagTask, base_cfg: SimulationConfig,
              master_seed: int, *, models=MODELS, runs: int = 5,
              node_features: NodePositionFeatures | None = None,
              size_regressor: CascadeSizeRegressor | None = None) -> TrialResult:
    """Full protocol for one hashtag: per model, fit stickiness once, run
    ``runs`` simulations at the fitted value, and score each against the
    empirical cascade. A failing model is recorded and leaves a gap instead
    of aborting the trial. Reproducible from (master_seed, tag)."""
    tag = task.spec.tag
    if node_features is None:
        node_features = node_position_features(
            world.net, rng_seed=derive_seed(master_seed, "features"))
    result = TrialResult(hashtag=tag, calibrations={}, cascades={}, vectors=[])
    for model in models:
        try:
            net = world.net
            if model == IDENTITY_ONLY:
                net = rewire_configuration_model(
                    world.net, derive_seed(master_seed, tag, "rewire"))
            caches = build_delta_caches(net, world.ids, task.spec, model,
                                        paper_literal=base_cfg.paper_literal_delta)
            calib = fit_stickiness(net, world.ids, task.spec,
                                   replace(base_cfg, variant=model),
                                   derive_seed(master_seed, tag, model, "calibration"),
                                   caches=caches)
            result.calibrations[model] = calib
            result.cascades[model] = []
            for k in range(runs):
                cfg = replace(base_cfg, variant=model, stickiness=calib.stickiness,
                              rng_seed=derive_seed(master_seed, tag, model, k))
                cascade = run_simulation(net, world.ids, task.spec, cfg, caches=caches)
                result.cascades[model].append(cascade)
                ctx = MetricContext(
                    net=world.net, ids=world.ids, regions=world.regions,
                    spec=task.spec,
                    rng_seed=derive_seed(master_seed, tag, model, k, "metrics"),
                    node_features=node_features, size_regressor=size_regressor)
                mv = compute_metrics(cascade, task.empirical, ctx)
                mv.hashtag, mv.model, mv.run = tag, model, k
                result.vectors.append(mv)
        except ValueError as e:
            result.failures[model] = str(e)
    return result


@dataclass
class ExperimentResult:
    trials: list[TrialResult]
    cmi: CmiBatch
    covariates: list[CovariateRow]

    def mean_cmi_by(self, key=("hashtag", "model")) -> dict:
        groups: dict[tuple, list[float]] = {}
        for row in self.cmi.rows:
            k = tuple(getattr(row, f) for f in key)
            groups.setdefault(k, []).append(row.cmi)
        return {k: float(np.mean(v)) for k, v in groups.items()}

    def select_models(self, *, folds: int = 5, repeats: int = 5, rng_seed: int = 0):
        return combined_models(self.mean_cmi_by(), self.covariates,
                               folds=folds, repeats=repeats, rng_seed=rng_seed)


def train_size_regressor(world: World, tasks, *, model: str = "mlp",
                         rng_seed: int = 0) -> CascadeSizeRegressor:
    """Corpus-level regressor: empirical early-adopter features -> empirical size."""
    x = [early_adopter_features(t.empirical, world.net, world.ids) for t in tasks]
    y = [t.empirical.n_events for t in tasks]
    return CascadeSizeRegressor(model=model, rng_seed=rng_seed).fit(np.array(x), y)


def run_experiment(world: World, tasks: list[HashtagTask],
                   base_cfg: SimulationConfig, master_seed: int, *,
                   models=MODELS, runs: int = 5, m7_model: str = "mlp",
                   per_hashtag_pooling: bool = False, jobs: int = 1,
                   embeddings: dict | None = None,
                   freq_series: dict | None = None) -> ExperimentResult:
    """All trials for a hashtag corpus, with shared read-only world analytics."""
    feats = node_position_features(world.net, rng_seed=derive_seed(master_seed, "features"))
    regressor = train_size_regressor(world, tasks, model=m7_model,
                                     rng_seed=derive_seed(master_seed, "m7") % (2**31))

    def one(task):
        return run_trial(world, task, base_cfg, master_seed, models=models,
                         runs=runs, node_features=feats, size_regressor=regressor)

    if jobs > 1 and len(tasks) > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            trials = list(pool.map(
                _trial_worker,
                [(world, t, base_cfg, master_seed, models, runs, feats, regressor)
                 for t in tasks]))
    else:
        trials = [one(t) for t in tasks]

    vectors = [mv for tr in trials for mv in tr.vectors]
    if not vectors:
        raise ExperimentError("every trial failed; no metric vectors to pool")
    covariates = [build_covariate_row(world, t, feats, embeddings=embeddings,
                                      freq_series=freq_series) for t in tasks]
    return ExperimentResult(trials=trials,
                            cmi=compose_cmi(vectors, per_hashtag=per_hashtag_pooling),
                            covariates=covariates)


def _trial_worker(args):
    world, task, base_cfg, master_seed, models, runs, feats, regressor = args
    return run_trial(world, task, base_cfg, master_seed, models=models, runs=runs,
                     node_features=feats, size_regressor=regressor)


# ---------------------------------------------------------------------------
# Interaction regression (covariate effects per model)
# ---------------------------------------------------------------------------

@dataclass
class RegressionResult:
    names: list[str]
    coef: np.ndarray
    stderr: np.ndarray
    dropped: list[str]
    n_obs: int

    def coefficient(self, name: str) -> float:
        return float(self.coef[self.names.index(name)])

    def se(self, name: str) -> float:
        return float(self.stderr[self.names.index(name)])


def fit_interaction_regression(rows) -> RegressionResult:
    """OLS of cmi on covariates plus covariate-by-model interactions.

    ``rows`` is a list of (CovariateRow, model, cmi). Covariates are
    standardized; topic enters one-hot against a held-out reference level.
    The base coefficients describe the network+identity model; the _id and
    _net interaction terms shift each covariate's effect for the identity-only
    and network-only models. Rank-deficient designs are fitted on a maximal
    independent column subset and the dropped columns reported.
    """
    if len(rows) < 2:
        raise ExperimentError("regression needs at least 2 rows")
    models = {m for _, m, _ in rows}
    if len(models) < 3:
        raise ExperimentError("regression needs all three models represented")

    categories = [c for c, _ in rows[0][0].seed_similarity.items()]
    base_names = covariate_names(categories)
    topics = sorted({cv.topic for cv, _, _ in rows})
    reference = topics[0]
    topic_names = [f"topic_{t}" for t in topics[1:]]

    numeric = np.array([cv.numeric(categories) for cv, _, _ in rows])
    mu = numeric.mean(axis=0)
    sd = numeric.std(axis=0)
    sd = np.where(sd == 0, 1.0, sd)
    numeric = (numeric - mu) / sd
    onehot = np.array([[1.0 if cv.topic == t else 0.0 for t in topics[1:]]
                       for cv, _, _ in rows])
    c_all = np.hstack([numeric, onehot])
    c_names = base_names + topic_names

    ind_id = np.array([1.0 if m == IDENTITY_ONLY else 0.0 for _, m, _ in rows])
    ind_net = np.array([1.0 if m == NETWORK_ONLY else 0.0 for _, m, _ in rows])
    x = np.hstack([np.ones((len(rows), 1)), c_all,
                   c_all * ind_id[:, None], c_all * ind_net[:, None]])
    names = (["intercept"] + c_names
             + [f"{n}_id" for n in c_names] + [f"{n}_net" for n in c_names])
    y = np.array([cmi for _, _, cmi in rows])

    # Column-pivoted QR exposes a maximal independent subset.
    _, r, piv = qr(x, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r))
    tol = diag.max() * max(x.shape) * np.finfo(float).eps if len(diag) else 0.0
    rank = int((diag > tol).sum())
    kept = np.sort(piv[:rank])
    dropped = [names[j] for j in sorted(piv[rank:])]

    xk = x[:, kept]
    coef_k, *_ = np.linalg.lstsq(xk, y, rcond=None)
    resid = y - xk @ coef_k
    dof = max(len(rows) - rank, 1)
    sigma2 = float(resid @ resid) / dof
    cov = sigma2 * np.linalg.pinv(xk.T @ xk)
    se_k = np.sqrt(np.diag(cov))

    coef = np.full(len(names), np.nan)
    stderr = np.full(len(names), np.nan)
    coef[kept] = coef_k
    stderr[kept] = se_k
    return RegressionResult(names=names, coef=coef, stderr=stderr,
                            dropped=dropped, n_obs=len(rows))


# ---------------------------------------------------------------------------
# Optimal and predicted combined models
# ---------------------------------------------------------------------------

@dataclass
class CombinedModelReport:
    hashtags: list[str]
    optimal: list[str]
    predicted: list[str]
    accuracy: float
    accuracy_per_repeat: list[float]
    majority_baseline: float
    cmi_means: dict[str, float]


def combined_models(per_trial_cmi: dict, covariates: list[CovariateRow], *,
                    folds: int = 5, repeats: int = 5,
                    rng_seed: int = 0) -> CombinedModelReport:
    """Post-hoc optimal selection and a cross-validated covariate-based selector.

    ``per_trial_cmi`` maps (hashtag, model) to that trial's mean cmi. The
    label for each hashtag is its argmax model. The predictor is an ensemble
    of randomized decision trees on the covariate rows, evaluated by repeated
    k-fold cross-validation; the reported prediction per hashtag is the
    out-of-fold majority vote.
    """
    per = per_trial_cmi
    hashtags = sorted({h for h, _ in per})
    models_present = sorted({m for _, m in per})
    if len(hashtags) < folds:
        raise ExperimentError(
            f"{len(hashtags)} trials cannot be split into {folds} folds")

    def best_model(h):
        scored = [(per[(h, m)], m) for m in models_present if (h, m) in per]
        top = max(s for s, _ in scored)
        for m in MODELS:  # deterministic tie-break in fixed model order
            if (per.get((h, m), -np.inf)) == top:
                return m
        return max(scored)[1]

    labels = np.array([best_model(h) for h in hashtags])
    cov_by_tag = {cv.hashtag: cv for cv in covariates}
    categories = [c for c, _ in covariates[0].seed_similarity.items()]
    topics = sorted({cv.topic for cv in covariates})
    feats = np.array([
        np.concatenate([cov_by_tag[h].numeric(categories),
                        [1.0 if cov_by_tag[h].topic == t else 0.0 for t in topics]])
        for h in hashtags])

    votes = {h: {} for h in hashtags}
    accs = []
    for rep in range(repeats):
        pred = np.empty(len(hashtags), dtype=object)
        kf = KFold(n_splits=folds, shuffle=True,
                   random_state=derive_seed(rng_seed, "fold", rep) % (2**31))
        for train, test in kf.split(feats):
            clf = RandomForestClassifier(
                n_estimators=200,
                random_state=derive_seed(rng_seed, "rf", rep) % (2**31))
            clf.fit(feats[train], labels[train])
            pred[test] = clf.predict(feats[test])
        accs.append(float(np.mean(pred == labels)))
        for h, p in zip(hashtags, pred):
            votes[h][p] = votes[h].get(p, 0) + 1

    def majority_vote(h):
        top = max(votes[h].values())
        for m in MODELS:
            if votes[h].get(m, 0) == top:
                return m
        return max(votes[h], key=votes[h].get)

    predicted = [majority_vote(h) for h in hashtags]
    counts = {m: int((labels == m).sum()) for m in models_present}
    baseline = max(counts.values()) / len(hashtags)

    cmi_means = {m: float(np.mean([per[(h, m)] for h in hashtags if (h, m) in per]))
                 for m in models_present}
    cmi_means["optimal"] = float(np.mean([per[(h, l)] for h, l in zip(hashtags, labels)]))
    cmi_means["predicted"] = float(np.mean(
        [per[(h, p)] if (h, p) in per else per[(h, best_model(h))]
         for h, p in zip(hashtags, predicted)]))

    return CombinedModelReport(
        hashtags=hashtags, optimal=list(labels), predicted=predicted,
        accuracy=float(np.mean(accs)), accuracy_per_repeat=accs,
        majority_baseline=baseline, cmi_means=cmi_means)
