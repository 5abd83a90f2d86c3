"""Command-line surface: reproducible pipelines over worlds, hashtags, and trials.

Every run that writes into an output directory also writes a manifest
(command, seeds, input hashes), and all result tables are emitted with
deterministic formatting so identical manifests reproduce identical bytes.

Exit codes: 0 success, 1 validation error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .calibrate import fit_stickiness
from .cmi import CmiBatch
from .engine import (IDENTITY_ONLY, NETWORK_IDENTITY, SimulationConfig, VARIANTS,
                     run_simulation)
from .experiment import (MODELS, CovariateRow, HashtagTask, combined_models,
                         covariate_names, fit_interaction_regression, make_task,
                         run_experiment)
from .graph import GraphError, rewire_configuration_model
from .identity import IdentityError
from .metrics import METRIC_NAMES, MetricContext, MetricError, compute_metrics
from .rng import derive_seed
from .worldio import (WorldError, _sha256, generate_world, load_world,
                      read_cascade, read_experiment_manifest, read_hashtag_list,
                      read_simulation_config, read_world_params, save_world,
                      write_cascade)


class CliError(Exception):
    """Input or configuration problem; message is shown verbatim."""


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _write_csv(path, header, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def write_manifest(out_dir, command, argv, seed, inputs, outputs,
                   config_path=None) -> None:
    manifest = {
        "command": command,
        "argv": list(argv),
        "config": str(config_path) if config_path else None,
        "master_seed": seed,
        "artifact_version": __version__,
        "input_hashes": {str(p): _sha256(Path(p)) for p in inputs if Path(p).is_file()},
        "outputs": [str(p) for p in outputs],
    }
    with open(Path(out_dir) / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=2)
        fh.write("\n")


def _jobs(args) -> int:
    if args.jobs is not None:
        return args.jobs
    env = os.environ.get("CASCADELAB_JOBS")
    return int(env) if env else 1


def _load_sim_config(path) -> SimulationConfig:
    return read_simulation_config(path) if path else SimulationConfig()


def _resolve_entry(entries, tag):
    if tag is None:
        if len(entries) != 1:
            raise CliError("--tag is required when the hashtag list has several entries")
        return entries[0]
    for e in entries:
        if e.tag == tag:
            return e
    raise CliError(f"hashtag {tag!r} not found in the hashtag list")


def _entry_to_task(world, entry, hashtags_path) -> HashtagTask:
    if not entry.cascade_path:
        raise CliError(f"hashtag {entry.tag!r} names no empirical cascade file")
    path = Path(entry.cascade_path)
    if not path.is_absolute():
        path = Path(hashtags_path).parent / path
    emp, _ = read_cascade(path, world.net)
    return make_task(world, entry.tag, emp, seeds=entry.seeds or None,
                     sample_rate=entry.sample_rate, topic=entry.topic)


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_synth(args, argv) -> int:
    params = read_world_params(args.config)
    if args.seed is not None:
        params = replace(params, rng_seed=args.seed)
    world = generate_world(params)
    out = Path(args.out)
    save_world(world, out)
    write_manifest(out, "synth", argv, params.rng_seed, [args.config],
                   [out / "world_manifest.json"], args.config)
    print(f"world: {world.net.n_nodes} nodes, {world.net.n_edges} edges -> {out}")
    return 0


def cmd_simulate(args, argv) -> int:
    world = load_world(args.world)
    entries = read_hashtag_list(args.hashtags)
    entry = _resolve_entry(entries, args.tag)
    task = _entry_to_task(world, entry, args.hashtags)
    cfg = replace(_load_sim_config(args.config), variant=args.variant,
                  stickiness=args.stickiness,
                  rng_seed=derive_seed(args.seed, entry.tag, args.variant, "simulate"))
    net = world.net
    if args.variant == IDENTITY_ONLY:
        net = rewire_configuration_model(world.net,
                                         derive_seed(args.seed, entry.tag, "rewire"))
    cascade = run_simulation(net, world.ids, task.spec, cfg)
    write_cascade(cascade, world.net, args.out, tag=entry.tag)
    print(f"{entry.tag}: {cascade.n_events} events, "
          f"{cascade.n_adopters()} adopters -> {args.out}")
    return 0


def cmd_calibrate(args, argv) -> int:
    world = load_world(args.world)
    entries = read_hashtag_list(args.hashtags)
    entry = _resolve_entry(entries, args.tag)
    task = _entry_to_task(world, entry, args.hashtags)
    cfg = replace(_load_sim_config(args.config), variant=args.variant)
    result = fit_stickiness(world.net if args.variant != IDENTITY_ONLY else
                            rewire_configuration_model(
                                world.net, derive_seed(args.seed, entry.tag, "rewire")),
                            world.ids, task.spec, cfg,
                            derive_seed(args.seed, entry.tag, args.variant, "calibration"))
    if args.out:
        result.write_trace(args.out)
    flags = "".join(f" [{f}]" for f, on in
                    (("degenerate", result.degenerate), ("boundary", result.boundary)) if on)
    print(f"{entry.tag} {args.variant}: stickiness={result.stickiness:.2f} "
          f"objective={result.objective:.4f} interval={result.coarse_interval}"
          f" evaluations={result.evaluations}{flags}")
    return 0


def cmd_evaluate(args, argv) -> int:
    world = load_world(args.world)
    sim, _ = read_cascade(args.sim, world.net)
    emp, _ = read_cascade(args.emp, world.net)
    seeds = [world.net.node_ids[i] for i in emp.seeds]
    task = make_task(world, args.tag or "cascade", emp, seeds=seeds,
                     sample_rate=args.sample_rate)
    ctx = MetricContext(net=world.net, ids=world.ids, regions=world.regions,
                        spec=task.spec, rng_seed=args.seed)
    mv = compute_metrics(sim, emp, ctx)
    if args.out:
        _write_csv(args.out, ["hashtag", "model", "run", *METRIC_NAMES, "flags"],
                   [[task.spec.tag, "evaluate", 0, *mv.values, mv.flags()]])
    for name, value, ok in zip(METRIC_NAMES, mv.values, mv.valid):
        print(f"{name}: {value!r}" if ok else f"{name}: invalid")
    return 0


def _write_trial_tables(out, batch: CmiBatch, vectors, calibrations, covariates,
                        tasks) -> list[Path]:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    metrics_path = out / "metrics.csv"
    _write_csv(metrics_path, ["hashtag", "model", "run", *METRIC_NAMES, "flags"],
               [[mv.hashtag, mv.model, mv.run, *mv.values, mv.flags()]
                for mv in vectors])
    cmi_path = out / "cmi.csv"
    _write_csv(cmi_path,
               ["hashtag", "model", "run", *[f"z{i}" for i in range(1, 11)],
                "cmi", "pop", "growth", "adopters"],
               [[r.hashtag, r.model, r.run, *r.z, r.cmi, r.popularity, r.growth,
                 r.adopters] for r in batch.rows])
    sizes = {t.spec.tag: t.empirical.n_events for t in tasks}
    calib_path = out / "calibrations.csv"
    _write_csv(calib_path,
               ["hashtag", "model", "stickiness", "objective", "interval_low",
                "interval_high", "evaluations", "degenerate", "boundary",
                "empirical_size"],
               [[tag, model, c.stickiness, c.objective, c.coarse_interval[0],
                 c.coarse_interval[1], c.evaluations, int(c.degenerate),
                 int(c.boundary), sizes.get(tag, 0)]
                for tag, model, c in calibrations])
    cov_path = out / "covariates.csv"
    if covariates:
        cats = list(covariates[0].seed_similarity)
        _write_csv(cov_path,
                   ["hashtag", "topic", *covariate_names(cats)],
                   [[cv.hashtag, cv.topic, *cv.numeric(cats)] for cv in covariates])
    return [metrics_path, cmi_path, calib_path, cov_path]


def _apply_experiment_manifest(args) -> None:
    """Fill omitted trial/select flags from the config's [experiment] section."""
    if not getattr(args, "config", None):
        return
    manifest = read_experiment_manifest(args.config)
    for key, value in manifest.items():
        if getattr(args, key, None) in (None, "unset"):
            setattr(args, key, value)


def cmd_trial(args, argv) -> int:
    _apply_experiment_manifest(args)
    for required in ("world", "hashtags"):
        if getattr(args, required) is None:
            raise CliError(f"--{required} is required (flag or [experiment] config)")
    if args.models is None:
        args.models = "all"
    if args.runs is None:
        args.runs = 5
    if args.seed is None:
        args.seed = 0
    if args.m7 is None:
        args.m7 = "mlp"
    world = load_world(args.world)
    entries = read_hashtag_list(args.hashtags)
    if args.tag:
        entries = [_resolve_entry(entries, args.tag)]
    tasks = [_entry_to_task(world, e, args.hashtags) for e in entries]
    models = MODELS if args.models == "all" else tuple(args.models.split(","))
    for m in models:
        if m not in VARIANTS:
            raise CliError(f"unknown model {m!r}")
    cfg = _load_sim_config(args.config)
    result = run_experiment(world, tasks, cfg, args.seed, models=models,
                            runs=args.runs, m7_model=args.m7,
                            per_hashtag_pooling=args.per_hashtag_pooling,
                            jobs=_jobs(args))
    calibrations = [(tr.hashtag, m, c) for tr in result.trials
                    for m, c in tr.calibrations.items()]
    outputs = _write_trial_tables(args.out, result.cmi,
                                  [mv for tr in result.trials for mv in tr.vectors],
                                  calibrations, result.covariates, tasks)
    write_manifest(args.out, "trial", argv, args.seed,
                   [args.hashtags] + ([args.config] if args.config else []),
                   outputs, args.config)
    for tr in result.trials:
        for model, why in tr.failures.items():
            print(f"warning: {tr.hashtag}/{model} failed: {why}", file=sys.stderr)
    print(f"{len(result.trials)} trials x {len(models)} models x {args.runs} runs "
          f"-> {args.out}")
    return 0


def _read_cmi_csv(path):
    rows = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        for rec in csv.DictReader(fh):
            rows.append((rec["hashtag"], rec["model"], int(rec["run"]),
                         float(rec["cmi"])))
    if not rows:
        raise CliError(f"cmi table {path} is empty")
    return rows


def _read_covariates_csv(path) -> list[CovariateRow]:
    out = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        cats = [c[4:] for c in reader.fieldnames if c.startswith("sim_")]
        for rec in reader:
            out.append(CovariateRow(
                hashtag=rec["hashtag"], topic=rec["topic"],
                semantic_sparsity=int(float(rec["semantic_sparsity"])),
                semantic_growth=float(rec["semantic_growth"]),
                seed_similarity={c: float(rec[f"sim_{c}"]) for c in cats},
                seed_proximity=float(rec["seed_proximity"]),
                median_seed_eigencentrality=float(rec["median_seed_eigencentrality"]),
            ))
    if not out:
        raise CliError(f"covariate table {path} is empty")
    return out


def _mean_cmi_per_trial(cmi_rows) -> dict:
    acc: dict[tuple, list[float]] = {}
    for tag, model, _, cmi in cmi_rows:
        acc.setdefault((tag, model), []).append(cmi)
    return {k: float(np.mean(v)) for k, v in acc.items()}


def cmd_regress(args, argv) -> int:
    cmi_rows = _read_cmi_csv(args.trials)
    covariates = {cv.hashtag: cv for cv in _read_covariates_csv(args.covariates)}
    per = _mean_cmi_per_trial(cmi_rows)
    rows = []
    for (tag, model), cmi in sorted(per.items()):
        if tag not in covariates:
            raise CliError(f"hashtag {tag!r} missing from the covariate table")
        rows.append((covariates[tag], model, cmi))
    res = fit_interaction_regression(rows)
    _write_csv(args.out, ["term", "coefficient", "stderr"],
               [[n, c, s] for n, c, s in zip(res.names, res.coef, res.stderr)])
    if res.dropped:
        print(f"rank-deficient design; dropped: {', '.join(res.dropped)}",
              file=sys.stderr)
    print(f"{len(rows)} rows, {len(res.names) - len(res.dropped)} terms "
          f"-> {args.out}")
    return 0


def cmd_select(args, argv) -> int:
    _apply_experiment_manifest(args)
    args.folds = 5 if args.folds is None else args.folds
    args.repeats = 5 if args.repeats is None else args.repeats
    args.seed = 0 if args.seed is None else args.seed
    cmi_rows = _read_cmi_csv(args.trials)
    covariates = _read_covariates_csv(args.covariates)
    report = combined_models(_mean_cmi_per_trial(cmi_rows), covariates,
                             folds=args.folds, repeats=args.repeats,
                             rng_seed=args.seed)
    payload = {
        "hashtags": report.hashtags,
        "optimal": report.optimal,
        "predicted": report.predicted,
        "accuracy": report.accuracy,
        "accuracy_per_repeat": report.accuracy_per_repeat,
        "majority_baseline": report.majority_baseline,
        "cmi_means": report.cmi_means,
    }
    with open(args.out, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True, indent=2)
        fh.write("\n")
    print(f"selector accuracy {report.accuracy:.3f} "
          f"(baseline {report.majority_baseline:.3f}) -> {args.out}")
    return 0


def _quantile_bins(values, edges_q):
    edges = np.quantile(values, edges_q)
    return edges


def cmd_report(args, argv) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(args.trials, "r", encoding="utf-8", newline="") as fh:
        recs = list(csv.DictReader(fh))
    if not recs:
        raise CliError(f"cmi table {args.trials} is empty")
    models = sorted({r["model"] for r in recs})

    def mean_of(rows, col):
        vals = [float(r[col]) for r in rows if r[col] not in ("", "nan")]
        return float(np.mean(vals)) if vals else float("nan")

    _write_csv(out / "cmi_by_model.csv",
               ["model", "mean_cmi", "mean_pop", "mean_growth", "mean_adopters", "rows"],
               [[m, *(mean_of([r for r in recs if r["model"] == m], c)
                      for c in ("cmi", "pop", "growth", "adopters")),
                 sum(r["model"] == m for r in recs)] for m in models])

    outputs = [out / "cmi_by_model.csv"]
    if args.covariates:
        covs = _read_covariates_csv(args.covariates)
        cats = list(covs[0].seed_similarity)
        per_tag = {cv.hashtag: cv for cv in covs}
        rows = []
        numeric_cols = covariate_names(cats)
        for col in numeric_cols:
            vals = {h: cv.numeric(cats)[numeric_cols.index(col)]
                    for h, cv in per_tag.items()}
            edges = np.quantile(list(vals.values()), [1 / 3, 2 / 3])
            for m in models:
                by_level = {"low": [], "mid": [], "high": []}
                for r in recs:
                    if r["model"] != m or r["hashtag"] not in vals:
                        continue
                    v = vals[r["hashtag"]]
                    level = "low" if v <= edges[0] else ("mid" if v <= edges[1] else "high")
                    by_level[level].append(float(r["cmi"]))
                for level in ("low", "mid", "high"):
                    if by_level[level]:
                        rows.append([col, level, m, float(np.mean(by_level[level])),
                                     len(by_level[level])])
        topics = sorted({cv.topic for cv in covs})
        for topic in topics:
            tags = {cv.hashtag for cv in covs if cv.topic == topic}
            for m in models:
                vals = [float(r["cmi"]) for r in recs
                        if r["model"] == m and r["hashtag"] in tags]
                if vals:
                    rows.append(["topic", topic, m, float(np.mean(vals)), len(vals)])
        _write_csv(out / "cmi_by_covariate_level.csv",
                   ["covariate", "level", "model", "mean_cmi", "rows"], rows)
        outputs.append(out / "cmi_by_covariate_level.csv")

    if args.calibrations:
        with open(args.calibrations, "r", encoding="utf-8", newline="") as fh:
            sizes = {r["hashtag"]: int(r["empirical_size"])
                     for r in csv.DictReader(fh)}
        tags = sorted(sizes)
        vals = np.array([sizes[t] for t in tags], dtype=float)
        edges = np.quantile(vals, [0.2, 0.4, 0.6, 0.8])
        quint = {t: int(np.searchsorted(edges, sizes[t], side="left")) + 1
                 for t in tags}
        rows = []
        for q in range(1, 6):
            qtags = {t for t in tags if quint[t] == q}
            for m in models:
                v = [float(r["cmi"]) for r in recs
                     if r["model"] == m and r["hashtag"] in qtags]
                if v:
                    rows.append([q, m, float(np.mean(v)), len(v)])
        _write_csv(out / "cmi_by_size_quintile.csv",
                   ["quintile", "model", "mean_cmi", "rows"], rows)
        outputs.append(out / "cmi_by_size_quintile.csv")

    write_manifest(out, "report", argv, 0,
                   [p for p in (args.trials, args.covariates, args.calibrations) if p],
                   outputs)
    print(f"report tables -> {out}")
    return 0


# ---------------------------------------------------------------------------
# Parser / dispatch
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="cascadelab",
        description="Simulate, calibrate, and score hashtag cascades over a "
                    "weighted social network.")
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("synth", help="generate a synthetic world directory")
    sp.add_argument("--config", required=True, help="INI file with a [world] section")
    sp.add_argument("--out", required=True)
    sp.add_argument("--seed", type=int, default=None)
    sp.set_defaults(fn=cmd_synth)

    sp = sub.add_parser("simulate", help="run one cascade simulation")
    sp.add_argument("--world", required=True)
    sp.add_argument("--hashtags", required=True, help="hashtag list (JSON lines)")
    sp.add_argument("--tag", default=None)
    sp.add_argument("--variant", default=NETWORK_IDENTITY, choices=VARIANTS)
    sp.add_argument("--stickiness", type=float, default=0.5)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--config", default=None, help="INI file with a [simulation] section")
    sp.add_argument("--out", required=True)
    sp.set_defaults(fn=cmd_simulate)

    sp = sub.add_parser("calibrate", help="fit stickiness for one hashtag")
    sp.add_argument("--world", required=True)
    sp.add_argument("--hashtags", required=True)
    sp.add_argument("--tag", default=None)
    sp.add_argument("--variant", default=NETWORK_IDENTITY, choices=VARIANTS)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--config", default=None)
    sp.add_argument("--out", default=None, help="calibration trace CSV")
    sp.set_defaults(fn=cmd_calibrate)

    sp = sub.add_parser("evaluate", help="score one simulated against one empirical cascade")
    sp.add_argument("--sim", required=True)
    sp.add_argument("--emp", required=True)
    sp.add_argument("--world", required=True)
    sp.add_argument("--tag", default=None)
    sp.add_argument("--sample-rate", type=float, default=1.0)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", default=None)
    sp.set_defaults(fn=cmd_evaluate)

    sp = sub.add_parser("trial", help="calibrate + simulate + score a hashtag corpus")
    sp.add_argument("--world", default=None)
    sp.add_argument("--hashtags", default=None)
    sp.add_argument("--tag", default=None, help="restrict to one hashtag")
    sp.add_argument("--models", default=None, help="'all' or a comma list")
    sp.add_argument("--runs", type=int, default=None)
    sp.add_argument("--seed", type=int, default=None)
    sp.add_argument("--m7", default=None, choices=("mlp", "ridge"))
    sp.add_argument("--per-hashtag-pooling", action="store_true")
    sp.add_argument("--config", default=None,
                    help="INI file; [simulation] and [experiment] sections apply")
    sp.add_argument("--jobs", type=int, default=None,
                    help="worker parallelism (default: CASCADELAB_JOBS or 1)")
    sp.add_argument("--out", required=True)
    sp.set_defaults(fn=cmd_trial)

    sp = sub.add_parser("regress", help="covariate-by-model interaction regression")
    sp.add_argument("--trials", required=True, help="cmi.csv from a trial run")
    sp.add_argument("--covariates", required=True)
    sp.add_argument("--out", required=True)
    sp.set_defaults(fn=cmd_regress)

    sp = sub.add_parser("select", help="optimal and predicted combined models")
    sp.add_argument("--trials", required=True)
    sp.add_argument("--covariates", required=True)
    sp.add_argument("--folds", type=int, default=None)
    sp.add_argument("--repeats", type=int, default=None)
    sp.add_argument("--seed", type=int, default=None)
    sp.add_argument("--config", default=None,
                    help="INI file; [experiment] folds/repeats/seed apply")
    sp.add_argument("--out", required=True)
    sp.set_defaults(fn=cmd_select)

    sp = sub.add_parser("report", help="plot-ready summary tables")
    sp.add_argument("--trials", required=True, help="cmi.csv from a trial run")
    sp.add_argument("--covariates", default=None)
    sp.add_argument("--calibrations", default=None,
                    help="calibrations.csv (enables size-quintile table)")
    sp.add_argument("--out", required=True)
    sp.set_defaults(fn=cmd_report)
    return p


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:  # argparse exits 2 on bad usage; that's validation
        return 0 if e.code in (0, None) else 1
    try:
        return args.fn(args, argv)
    except (CliError, WorldError, GraphError, IdentityError, MetricError,
            FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except Exception as e:  # noqa: BLE001 - boundary: report and exit 2
        print(f"runtime failure: {type(e).__name__}: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
