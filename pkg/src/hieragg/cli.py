"""Command line entry point: ``hieragg {synth,cluster,features,run,evaluate}``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path

import pandas as pd

from . import cluster, features, pipeline
from .errors import ConfigError, DataError, StageError
from .evaluate import evaluate_strategies
from .hierarchy import HierarchySpec, build_constraint_matrix, build_projector

EXIT_OK, EXIT_CONFIG, EXIT_DATA = 0, 2, 3
log = logging.getLogger("hieragg")


def _load_config(args) -> pipeline.RunConfig:
    cfg = pipeline.RunConfig.from_json(args.config) if args.config else pipeline.RunConfig()
    if args.seed is not None:
        cfg.seed = args.seed
    if args.threads is not None:
        cfg.threads = args.threads
    if args.out is not None:
        cfg.out = args.out
    return cfg.validate()


def _out_dir(args, default="out") -> Path:
    out = Path(args.out or default)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_synth(args):
    doc = {}
    if args.config:
        try:
            doc = json.loads(Path(args.config).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc
        doc = doc.get("data", {}).get("synthetic", doc)
    if args.seed is not None:
        doc["seed"] = args.seed
    for key in ("weekend_factor", "temp_sensitivity"):
        if key in doc:
            doc[key] = tuple(doc[key])
    try:
        spec = pipeline.SyntheticFleetSpec(**doc)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
    out = _out_dir(args, "fleet")
    pipeline.generate_fleet(spec).write(out)
    (out / "fleet_spec.json").write_text(json.dumps(asdict(spec), indent=2))
    print(f"wrote fleet of {spec.n_households} households to {out}")


def cmd_cluster(args):
    cfg = _load_config(args)
    fleet = pipeline.load_fleet(cfg)
    split = pipeline.DateSplit.from_config(cfg.dates, fleet.consumption.index)
    parts = pipeline.build_partitions(cfg, fleet, split.train, pipeline.stage_seeds(cfg.seed, 2)[0])
    out = _out_dir(args)
    named = {}
    for j, part in enumerate(parts):
        part.to_csv(out / f"clustering_{j + 1}.csv")
        named[f"{part.name}_{j + 1}"] = part
    if "archetype" in fleet.attributes.columns:
        ids = list(parts[0].assignment)
        named["archetype"] = cluster.attribute_clustering(
            fleet.attributes[fleet.attributes.household_id.isin(ids)], "archetype", None)
    names = list(named)
    ari = pd.DataFrame(
        [[cluster.adjusted_rand_index(named[a], named[b]) for b in names] for a in names], index=names, columns=names
    )
    ari.to_csv(out / "ari_matrix.csv")
    print(ari.round(3).to_string())


def cmd_features(args):
    cfg = _load_config(args)
    fleet = pipeline.load_fleet(cfg)
    split = pipeline.DateSplit.from_config(cfg.dates, fleet.consumption.index)
    s_cluster, s_feat = pipeline.stage_seeds(cfg.seed, 2)
    parts = pipeline.build_partitions(cfg, fleet, split.train, s_cluster)
    spec = pipeline.build_hierarchy(parts)
    Y = pipeline.node_series(fleet.consumption, spec)
    X, models = pipeline.build_features(cfg, fleet, Y, spec, split, s_feat)
    out = _out_dir(args)
    features.write_long_panel(X.dropna(), out / "features.csv")
    (out / "feature_models.json").write_text(json.dumps(models, indent=2, sort_keys=True))
    (out / "hierarchy.json").write_text(spec.to_json())
    print(f"wrote features for {len(spec.nodes)} nodes to {out}")


def cmd_run(args):
    cfg = _load_config(args)
    if cfg.out is None:
        cfg.out = "out"
    report, _ = pipeline.run_pipeline(cfg)
    print(report.to_frame().to_string())


def cmd_evaluate(args):
    out = _out_dir(args)
    spec = HierarchySpec.from_json(Path(args.hierarchy).read_text())
    P = build_projector(build_constraint_matrix(spec))
    obs = features.ingest_external_features(args.observations, spec.nodes)
    fc = pd.read_csv(args.forecasts, dtype={"node_id": str})
    fc["timestamp"] = pd.to_datetime(fc["timestamp"], utc=True)
    report = None
    for label, group in fc.groupby("strategy", sort=True):
        alg, _, strategy = label.rpartition(":")
        panel = group.pivot(index="timestamp", columns="node_id", values="value").reindex(obs.index)[list(spec.nodes)]
        if panel.isna().any().any():
            raise DataError(f"forecasts for {label!r} do not cover the observations")
        report = evaluate_strategies(obs, {strategy: panel}, spec, None, P, alg, report)
    (out / "report.json").write_text(report.to_json())
    (out / "report.csv").write_text(report.to_csv())
    print(report.to_frame().to_string())


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hieragg", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    cmds = {
        "synth": (cmd_synth, "generate a synthetic household fleet"),
        "cluster": (cmd_cluster, "build partitions and their ARI matrix"),
        "features": (cmd_features, "fit and emit benchmark features"),
        "run": (cmd_run, "run the full forecasting pipeline"),
        "evaluate": (cmd_evaluate, "re-score an existing forecast file"),
    }
    for name, (fn, help_) in cmds.items():
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", help="JSON configuration file")
        p.add_argument("--seed", type=int, help="override the top-level seed")
        p.add_argument("--threads", type=int, help="worker threads")
        p.add_argument("--out", help="output directory")
        p.add_argument("-v", "--verbose", action="store_true")
        if name == "evaluate":
            p.add_argument("--forecasts", required=True, help="timestamp,node_id,strategy,value CSV")
            p.add_argument("--observations", required=True, help="timestamp,node_id,value CSV")
            p.add_argument("--hierarchy", required=True, help="hierarchy JSON")
        p.set_defaults(func=fn)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        args.func(args)
    except (ConfigError, DataError, StageError) as exc:
        cause = exc.cause if isinstance(exc, StageError) else exc
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG if isinstance(cause, ConfigError) else EXIT_DATA
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
