"""Command-line pipeline driver.

Each subcommand runs one stage against a work directory; `run-all` chains
them: synth -> ingest -> augment -> build-datasets -> train -> evaluate ->
report. Stages communicate only through files under the work directory, so
any stage can be re-run alone once its inputs exist.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import shutil
import sys
from pathlib import Path

from .augment import compute_balance_plan, run_balance_augment
from .config import ConfigError, ExperimentConfig, load_config
from .datasets import (VARIANT_IDS, build_experiment, build_variants,
                       enumerate_variants, load_experiment)
from .evaluate import (assemble_report, evaluate_models, overfit_gap,
                       split_holdout, train_models_on_stream,
                       write_grid_report)
from .ingest import Manifest, generate_synthetic_corpus, ingest_corpus
from .learn import MODEL_KINDS, load_checkpoint, save_checkpoint
from .rng import child_seed

log = logging.getLogger("edgeforge.cli")

_LOG_LEVELS = {
    "error": logging.ERROR,
    "warn": logging.WARNING,
    "info": logging.INFO,
    "debug": logging.DEBUG,
}


def _setup_logging() -> None:
    name = os.environ.get("EDGEFORGE_LOG", "warn").strip().lower()
    level = _LOG_LEVELS.get(name)
    logging.basicConfig(level=level or logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s",
                        stream=sys.stderr, force=True)
    if level is None and name:
        log.warning("EDGEFORGE_LOG=%r not one of %s; using warn", name,
                    "/".join(_LOG_LEVELS))


def _fresh_dir(path: Path) -> Path:
    if path.exists():
        shutil.rmtree(path)
    path.mkdir(parents=True)
    return path


def _load_manifest(path: Path, needed_by: str, produced_by: str) -> Manifest:
    if not path.is_file():
        raise RuntimeError(
            f"{needed_by} needs {path}; run `edgeforge {produced_by}` first")
    return Manifest.load(path)


def stage_synth(cfg: ExperimentConfig) -> None:
    log.info("synth: %d classes x %d scenes", cfg.corpus.num_classes,
             cfg.corpus.per_class)
    generate_synthetic_corpus(
        cfg.corpus.num_classes, cfg.corpus.per_class,
        cfg.corpus.orientations, cfg.corpus.background, cfg.seed,
        _fresh_dir(cfg.workdir / "corpus"), canvas=cfg.corpus.canvas,
        jobs=cfg.jobs, dataset_id="corpus")
    if cfg.alt_corpus.enabled:
        generate_synthetic_corpus(
            cfg.corpus.num_classes, cfg.alt_corpus.per_class,
            cfg.alt_corpus.orientations, cfg.alt_corpus.background,
            child_seed(cfg.seed, "alt_corpus"),
            _fresh_dir(cfg.workdir / "alt_corpus"),
            canvas=cfg.alt_corpus.canvas, jobs=cfg.jobs,
            dataset_id="alt_corpus")


def stage_ingest(cfg: ExperimentConfig) -> None:
    man = _load_manifest(cfg.workdir / "corpus" / "manifest.jsonl",
                         "ingest", "synth")
    ingest_corpus(man, _fresh_dir(cfg.workdir / "ground_truth"),
                  cfg.ingest.bin_threshold, cfg.ingest.margin,
                  cfg.ingest.bbox_source, cfg.ingest.annotation_order,
                  cfg.jobs, dataset_id="ground_truth")
    if cfg.alt_corpus.enabled:
        alt = _load_manifest(cfg.workdir / "alt_corpus" / "manifest.jsonl",
                             "ingest", "synth")
        # textured scenes defeat threshold detection; trust generator boxes
        ingest_corpus(alt, _fresh_dir(cfg.workdir / "alt_ground_truth"),
                      cfg.ingest.bin_threshold, cfg.ingest.margin,
                      "manifest", cfg.ingest.annotation_order, cfg.jobs,
                      dataset_id="alt_ground_truth")


def stage_augment(cfg: ExperimentConfig) -> None:
    man = _load_manifest(cfg.workdir / "ground_truth" / "manifest.jsonl",
                         "augment", "ingest")
    plan = compute_balance_plan(man.class_counts(), cfg.augment.target)
    log.info("augment: target %d per class", plan.target)
    run_balance_augment(man, plan, cfg.augment.op_mix, cfg.seed,
                        _fresh_dir(cfg.workdir / "balanced"), cfg.jobs,
                        dataset_id="balanced")


def stage_build_datasets(cfg: ExperimentConfig,
                         variant_ids: list[str] | None = None) -> None:
    src = _load_manifest(cfg.workdir / "balanced" / "manifest.jsonl",
                         "build-datasets", "augment")
    out = cfg.workdir / "variants"
    if variant_ids:
        specs = [s for s in enumerate_variants() if s.id in set(variant_ids)]
        out.mkdir(parents=True, exist_ok=True)
        build_variants(src, specs, cfg.edges.params, out,
                       cfg.edges.overlay_color, cfg.edges.import_root,
                       cfg.jobs)
        log.info("build-datasets: rebuilt %d of %d variants", len(specs),
                 len(VARIANT_IDS))
        return
    build_experiment(src, cfg.edges.params, _fresh_dir(out),
                     cfg.edges.overlay_color, cfg.edges.import_root, cfg.jobs)
    if cfg.alt_corpus.enabled:
        alt_src = _load_manifest(
            cfg.workdir / "alt_ground_truth" / "manifest.jsonl",
            "build-datasets", "ingest")
        # imported edge maps exist only for the primary corpus
        build_experiment(alt_src, cfg.edges.params,
                         _fresh_dir(cfg.workdir / "alt_variants"),
                         cfg.edges.overlay_color, None, cfg.jobs)


def _load_built_experiment(cfg: ExperimentConfig, stage: str, alt: bool = False):
    root = cfg.workdir / ("alt_variants" if alt else "variants")
    if not (root / "experiment.json").is_file():
        raise RuntimeError(f"{stage} needs {root / 'experiment.json'}; "
                           "run `edgeforge build-datasets` first")
    return load_experiment(root)


def _select(requested: list[str] | None, available, what: str) -> list[str]:
    if not requested:
        return sorted(available)
    missing = [r for r in requested if r not in available]
    if missing:
        raise RuntimeError(f"unknown {what}: {', '.join(missing)}")
    # preserve request order, drop duplicates
    return list(dict.fromkeys(requested))


def stage_train(cfg: ExperimentConfig,
                variant_ids: list[str] | None = None,
                model_kinds: list[str] | None = None) -> None:
    exp = _load_built_experiment(cfg, "train")
    selected = _select(variant_ids, exp, "variant")
    kinds = (_select(model_kinds, set(cfg.models.kinds), "model kind")
             if model_kinds else list(cfg.models.kinds))
    models_dir = cfg.workdir / "models"
    if not variant_ids and not model_kinds:
        _fresh_dir(models_dir)
    else:
        models_dir.mkdir(parents=True, exist_ok=True)
    for did in selected:
        stream_man, hold_man = split_holdout(exp[did], cfg.split)
        log.info("train %s: stream %d, holdout %d", did, len(stream_man),
                 len(hold_man))
        models, series, scaler, audit = train_models_on_stream(
            stream_man, cfg.split, kinds, cfg.feature_side,
            cfg.models.params)
        for kind in kinds:
            save_checkpoint(models_dir / f"{did}_{kind}.npz", models[kind],
                            scaler)
            train_acc, val_acc = series[kind]
            state = {
                "dataset_id": did,
                "model": kind,
                "train_acc": train_acc,
                "val_acc": val_acc,
                "overfit_gap": overfit_gap(train_acc, val_acc),
                "sample_counts": {
                    "stream": len(stream_man),
                    "holdout": len(hold_man),
                    "batches": len(train_acc),
                    "fit": len(audit["fit"]),
                    "val": len(audit["val"]),
                },
            }
            with open(models_dir / f"{did}_{kind}.train.json", "w",
                      encoding="utf-8") as fh:
                json.dump(state, fh, indent=2, sort_keys=True)
                fh.write("\n")


def stage_evaluate(cfg: ExperimentConfig,
                   variant_ids: list[str] | None = None,
                   model_kinds: list[str] | None = None) -> None:
    exp = _load_built_experiment(cfg, "evaluate")
    alt_exp = (_load_built_experiment(cfg, "evaluate", alt=True)
               if cfg.alt_corpus.enabled else None)
    selected = _select(variant_ids, exp, "variant")
    kinds = (_select(model_kinds, set(cfg.models.kinds), "model kind")
             if model_kinds else list(cfg.models.kinds))
    models_dir = cfg.workdir / "models"
    cells_dir = cfg.workdir / "reports" / "cells"
    if not variant_ids and not model_kinds:
        _fresh_dir(cells_dir)
    else:
        cells_dir.mkdir(parents=True, exist_ok=True)
    for did in selected:
        _, hold_man = split_holdout(exp[did], cfg.split)
        models = {}
        scaler = None
        states = {}
        for kind in kinds:
            ckpt = models_dir / f"{did}_{kind}.npz"
            state_path = models_dir / f"{did}_{kind}.train.json"
            if not ckpt.is_file() or not state_path.is_file():
                raise RuntimeError(f"evaluate needs {ckpt} and its train "
                                   "state; run `edgeforge train` first")
            models[kind], scaler = load_checkpoint(ckpt)
            with open(state_path, "r", encoding="utf-8") as fh:
                states[kind] = json.load(fh)
        hold_metrics = evaluate_models(models, scaler, hold_man,
                                       cfg.feature_side)
        alt_metrics = None
        if alt_exp is not None:
            alt_metrics = evaluate_models(models, scaler, alt_exp[did],
                                          cfg.feature_side)
        log.info("evaluate %s: holdout %d", did, len(hold_man))
        for kind in kinds:
            state = states[kind]
            cell = {
                "dataset_id": did,
                "model": kind,
                "accuracy": hold_metrics[kind]["accuracy"],
                "macro_f1": hold_metrics[kind]["macro_f1"],
                "per_class_f1": hold_metrics[kind]["per_class_f1"],
                "progressive_train_acc": state["train_acc"],
                "progressive_val_acc": state["val_acc"],
                "overfit_gap": state["overfit_gap"],
                "sample_counts": {
                    "stream": state["sample_counts"]["stream"],
                    "holdout": len(hold_man),
                    "batches": state["sample_counts"]["batches"],
                },
            }
            if alt_metrics is not None:
                cell["alt_accuracy"] = alt_metrics[kind]["accuracy"]
                cell["alt_macro_f1"] = alt_metrics[kind]["macro_f1"]
                cell["sample_counts"]["alt"] = len(alt_exp[did])
            with open(cells_dir / f"{did}_{kind}.json", "w",
                      encoding="utf-8") as fh:
                json.dump(cell, fh, indent=2, sort_keys=True)
                fh.write("\n")


def stage_report(cfg: ExperimentConfig) -> None:
    cells_dir = cfg.workdir / "reports" / "cells"
    paths = sorted(cells_dir.glob("*.json")) if cells_dir.is_dir() else []
    if not paths:
        raise RuntimeError(f"report needs cell files under {cells_dir}; "
                           "run `edgeforge evaluate` first")
    cells = []
    for path in paths:
        with open(path, "r", encoding="utf-8") as fh:
            cells.append(json.load(fh))
    kind_order = {k: i for i, k in enumerate(cfg.models.kinds)}
    cells.sort(key=lambda c: (c["dataset_id"],
                              kind_order.get(c["model"], len(kind_order)),
                              c["model"]))
    datasets = sorted({c["dataset_id"] for c in cells})
    kinds = [k for k in cfg.models.kinds
             if any(c["model"] == k for c in cells)]
    report = assemble_report(cells, cfg.split, cfg.feature_side, kinds,
                             datasets,
                             any("alt_accuracy" in c for c in cells))
    write_grid_report(report, cfg.workdir / "reports")
    log.info("report: %d cells over %d datasets", len(cells), len(datasets))


def _write_config_snapshot(cfg: ExperimentConfig) -> None:
    snap = cfg.to_dict()
    # workdir and jobs describe the execution, not the experiment; results
    # must not depend on them, so the snapshot stores canonical values
    snap["workdir"] = "."
    snap["jobs"] = 1
    cfg.workdir.mkdir(parents=True, exist_ok=True)
    with open(cfg.workdir / "config.json", "w", encoding="utf-8") as fh:
        json.dump(snap, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_root_index(cfg: ExperimentConfig) -> None:
    alt = cfg.alt_corpus.enabled
    index = {
        "config": "config.json",
        "corpus": "corpus/manifest.jsonl",
        "alt_corpus": "alt_corpus/manifest.jsonl" if alt else None,
        "ground_truth": "ground_truth/manifest.jsonl",
        "alt_ground_truth": "alt_ground_truth/manifest.jsonl" if alt else None,
        "balanced": "balanced/manifest.jsonl",
        "variants": "variants/experiment.json",
        "alt_variants": "alt_variants/experiment.json" if alt else None,
        "models": "models",
        "reports": {
            "grid_json": "reports/grid_report.json",
            "grid_csv": "reports/grid_report.csv",
            "cells": "reports/cells",
        },
    }
    with open(cfg.workdir / "experiment.json", "w", encoding="utf-8") as fh:
        json.dump(index, fh, indent=2, sort_keys=True)
        fh.write("\n")


def stage_run_all(cfg: ExperimentConfig) -> None:
    _write_config_snapshot(cfg)
    stage_synth(cfg)
    stage_ingest(cfg)
    stage_augment(cfg)
    stage_build_datasets(cfg)
    stage_train(cfg)
    stage_evaluate(cfg)
    stage_report(cfg)
    _write_root_index(cfg)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH",
                        help="JSON config file merged over defaults")
    common.add_argument("--seed", type=int, metavar="N",
                        help="override the config seed")
    common.add_argument("--jobs", type=int, metavar="N",
                        help="worker process cap for image stages")
    common.add_argument("--out", metavar="DIR",
                        help="override the config work directory")
    filters = argparse.ArgumentParser(add_help=False)
    filters.add_argument("--variant", action="append", metavar="ID",
                         choices=VARIANT_IDS,
                         help="restrict to one variant (repeatable)")
    filters.add_argument("--model", action="append", metavar="KIND",
                         choices=MODEL_KINDS,
                         help="restrict to one model kind (repeatable)")

    parser = argparse.ArgumentParser(
        prog="edgeforge",
        description="Shape-corpus pipeline: synthesis, augmentation, edge "
                    "variants, incremental training, and the metric grid.")
    sub = parser.add_subparsers(dest="command", required=True,
                                metavar="command")
    sub.add_parser("synth", parents=[common],
                   help="render the synthetic scene corpus")
    sub.add_parser("ingest", parents=[common],
                   help="crop objects and write annotations")
    sub.add_parser("augment", parents=[common],
                   help="balance classes with augmented copies")
    sub.add_parser("build-datasets", parents=[common, filters],
                   help="derive the edge and overlay variants")
    sub.add_parser("train", parents=[common, filters],
                   help="fit the incremental models per variant")
    sub.add_parser("evaluate", parents=[common, filters],
                   help="score trained models on the holdout")
    sub.add_parser("report", parents=[common],
                   help="assemble the metric grid report")
    sub.add_parser("run-all", parents=[common],
                   help="run every stage in order")
    return parser


def main(argv: list[str] | None = None) -> int:
    _setup_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    overrides: dict = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.jobs is not None:
        overrides["jobs"] = args.jobs
    if args.out is not None:
        overrides["workdir"] = args.out
    try:
        cfg = load_config(args.config, overrides)
    except ConfigError as exc:
        parser.print_usage(sys.stderr)
        print(f"edgeforge: error: {exc}", file=sys.stderr)
        return 2
    variant_ids = getattr(args, "variant", None)
    model_kinds = getattr(args, "model", None)
    try:
        if args.command == "synth":
            stage_synth(cfg)
        elif args.command == "ingest":
            stage_ingest(cfg)
        elif args.command == "augment":
            stage_augment(cfg)
        elif args.command == "build-datasets":
            stage_build_datasets(cfg, variant_ids)
        elif args.command == "train":
            stage_train(cfg, variant_ids, model_kinds)
        elif args.command == "evaluate":
            stage_evaluate(cfg, variant_ids, model_kinds)
        elif args.command == "report":
            stage_report(cfg)
        elif args.command == "run-all":
            stage_run_all(cfg)
        else:  # pragma: no cover - argparse blocks unknown commands
            parser.print_usage(sys.stderr)
            return 2
    except Exception as exc:
        log.debug("stage failed", exc_info=True)
        print(f"edgeforge: error: {exc}", file=sys.stderr)
        return 1
    return 0


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
