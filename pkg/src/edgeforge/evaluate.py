"""Split protocol, progressive training, metrics, and the comparison grid.

Training is incremental: the shuffled stream is cut into fixed-size
batches, each batch split 75/25. The scaler and every model see only the
75% side; the 25% side yields the per-batch validation accuracy. Holdout
records are set aside up front, stratified per class, and touch nothing
until final evaluation. The grid trains every requested model kind on
every dataset variant and writes a JSON report plus a flat CSV.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .imaging import read_png
from .ingest import Manifest
from .learn import (LearnerParams, LinearModel, StreamingScaler,
                    extract_features, save_checkpoint)
from .rng import stream as rng_stream

log = logging.getLogger("edgeforge.evaluate")

TREND_VARIANT = "rgb_all_edges"
TREND_BASELINE = "base_rgb"


@dataclass(frozen=True)
class SplitPlan:
    holdout_fraction: float = 0.2
    train_fraction: float = 0.75
    batch_size: int = 5000
    seed: int = 0

    def __post_init__(self) -> None:
        if not 0.0 < self.holdout_fraction < 1.0:
            raise ValueError("holdout_fraction must be in (0, 1)")
        if not 0.0 < self.train_fraction < 1.0:
            raise ValueError("train_fraction must be in (0, 1)")
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2")


def split_holdout(manifest: Manifest, plan: SplitPlan) -> tuple[Manifest, Manifest]:
    """Stratified stream/holdout split; the stream comes back shuffled.

    Per class, round(fraction * n) records (at least 1, at most n - 1) go
    to the holdout, chosen by a per-class seeded permutation.
    """
    by_class: dict = {}
    for idx, rec in enumerate(manifest.records):
        by_class.setdefault(rec.class_id, []).append(idx)

    hold_idx: list = []
    stream_idx: list = []
    for cid in sorted(by_class):
        idxs = by_class[cid]
        n = len(idxs)
        if n < 2:
            raise ValueError(f"class {cid} has {n} record(s); need >= 2 to split")
        n_hold = int(round(plan.holdout_fraction * n))
        n_hold = min(max(n_hold, 1), n - 1)
        perm = rng_stream(plan.seed, "holdout", cid).permutation(n)
        hold_idx.extend(idxs[i] for i in perm[:n_hold])
        stream_idx.extend(idxs[i] for i in perm[n_hold:])

    shuffle = rng_stream(plan.seed, "stream").permutation(len(stream_idx))
    stream_idx = [stream_idx[i] for i in shuffle]

    recs = manifest.records
    stream_man = Manifest(manifest.dataset_id + "_stream", manifest.num_classes,
                          [recs[i] for i in stream_idx], root=manifest.root)
    hold_man = Manifest(manifest.dataset_id + "_holdout", manifest.num_classes,
                        [recs[i] for i in hold_idx], root=manifest.root)
    return stream_man, hold_man


def batch_bounds(n: int, batch_size: int) -> list[tuple[int, int]]:
    """Cut [0, n) into batch_size runs; a trailing single record joins the
    previous batch because a one-record batch cannot be split two ways."""
    if n < 2:
        raise ValueError("need at least two records to batch")
    bounds = [(lo, min(lo + batch_size, n)) for lo in range(0, n, batch_size)]
    if len(bounds) > 1 and bounds[-1][1] - bounds[-1][0] < 2:
        last = bounds.pop()
        prev = bounds.pop()
        bounds.append((prev[0], last[1]))
    return bounds


def train_count(k: int, fraction: float) -> int:
    return min(max(int(round(fraction * k)), 1), k - 1)


def _load_features(manifest: Manifest, records, side: int) -> np.ndarray:
    out = np.empty((len(records), side * side), dtype=np.float64)
    for i, rec in enumerate(records):
        out[i] = extract_features(read_png(manifest.resolve(rec)), side)
    return out


def train_models_on_stream(stream_man: Manifest, plan: SplitPlan,
                           kinds: list[str], side: int,
                           params: LearnerParams = LearnerParams()):
    """Run the batch protocol once, fitting all model kinds in lockstep.

    Every kind sees the identical stream, batch split, and scaler state, so
    results match training each model alone. Returns (models, series,
    scaler, audit) where series[kind] = (train_acc list, val_acc list) and
    audit holds the image paths used for fitting and for validation.
    """
    if not kinds:
        raise ValueError("no model kinds requested")
    dim = side * side
    scaler = StreamingScaler(dim)
    models = {k: LinearModel(k, stream_man.num_classes, dim, params)
              for k in kinds}
    series = {k: ([], []) for k in kinds}
    fit_paths: set = set()
    val_paths: set = set()

    recs = stream_man.records
    labels = np.array([r.class_id for r in recs])
    for lo, hi in batch_bounds(len(recs), plan.batch_size):
        batch = recs[lo:hi]
        X = _load_features(stream_man, batch, side)
        y = labels[lo:hi]
        t = train_count(len(batch), plan.train_fraction)
        scaler.update(X[:t])
        Xt = scaler.transform(X[:t])
        Xv = scaler.transform(X[t:])
        fit_paths.update(r.image_path for r in batch[:t])
        val_paths.update(r.image_path for r in batch[t:])
        for kind in kinds:
            model = models[kind]
            model.partial_fit(Xt, y[:t])
            train_acc = float(np.mean(model.predict(Xt) == y[:t]))
            val_acc = float(np.mean(model.predict(Xv) == y[t:]))
            series[kind][0].append(train_acc)
            series[kind][1].append(val_acc)

    audit = {"fit": fit_paths, "val": val_paths}
    return models, series, scaler, audit


def train_progressive(stream_man: Manifest, plan: SplitPlan, kind: str,
                      side: int, params: LearnerParams = LearnerParams()):
    """Single-model batch training; returns (model, scaler, train, val)."""
    models, series, scaler, _ = train_models_on_stream(
        stream_man, plan, [kind], side, params)
    train_acc, val_acc = series[kind]
    return models[kind], scaler, train_acc, val_acc


def compute_metrics(preds, truth, num_classes: int) -> dict:
    """Accuracy plus one-vs-rest per-class F1 and its unweighted mean.

    Empty precision/recall denominators count as 0, so a class absent from
    both predictions and truth contributes F1 = 0 to the macro average.
    """
    preds = np.asarray(preds)
    truth = np.asarray(truth)
    if preds.shape != truth.shape or preds.ndim != 1 or preds.size == 0:
        raise ValueError("preds and truth must be equal-length non-empty 1-D")
    accuracy = float(np.mean(preds == truth))
    per_class = []
    for c in range(num_classes):
        tp = int(np.sum((preds == c) & (truth == c)))
        fp = int(np.sum((preds == c) & (truth != c)))
        fn = int(np.sum((preds != c) & (truth == c)))
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        f1 = (2 * precision * recall / (precision + recall)
              if precision + recall else 0.0)
        per_class.append(f1)
    return {
        "accuracy": accuracy,
        "per_class_f1": per_class,
        "macro_f1": float(np.mean(per_class)),
    }


def overfit_gap(train_series, val_series) -> float:
    if not train_series or not val_series:
        raise ValueError("progressive series must be non-empty")
    return float(np.mean(train_series) - np.mean(val_series))


def evaluate_models(models: dict, scaler: StreamingScaler, manifest: Manifest,
                    side: int) -> dict:
    """Metrics per model kind over one manifest, features scaled once."""
    X = scaler.transform(_load_features(manifest, manifest.records, side))
    truth = np.array([r.class_id for r in manifest.records])
    out = {}
    for kind, model in models.items():
        preds = model.predict(X)
        out[kind] = compute_metrics(preds, truth, manifest.num_classes)
    return out


def rank_cells(cells: list, metric: str) -> list:
    """Datasets ranked by the mean of `metric` over their models."""
    per_dataset: dict = {}
    for cell in cells:
        per_dataset.setdefault(cell["dataset_id"], {})[cell["model"]] = cell[metric]
    rows = [
        {
            "dataset_id": did,
            "mean": float(np.mean(list(by_model.values()))),
            "per_model": by_model,
        }
        for did, by_model in per_dataset.items()
    ]
    rows.sort(key=lambda r: (-r["mean"], r["dataset_id"]))
    return rows


def trend_section(cells: list) -> dict:
    """Holdout-accuracy comparison of the all-edges overlay vs plain RGB."""
    acc = {}
    for cell in cells:
        if cell["dataset_id"] in (TREND_VARIANT, TREND_BASELINE):
            acc.setdefault(cell["dataset_id"], {})[cell["model"]] = cell["accuracy"]
    if TREND_VARIANT not in acc or TREND_BASELINE not in acc:
        return {"available": False}
    mean_variant = float(np.mean(list(acc[TREND_VARIANT].values())))
    mean_base = float(np.mean(list(acc[TREND_BASELINE].values())))
    if mean_variant > mean_base:
        relation = "above"
    elif mean_variant < mean_base:
        relation = "below"
    else:
        relation = "level with"
    return {
        "available": True,
        "variant": TREND_VARIANT,
        "baseline": TREND_BASELINE,
        "variant_mean_accuracy": mean_variant,
        "baseline_mean_accuracy": mean_base,
        "difference": mean_variant - mean_base,
        "per_model": {
            TREND_VARIANT: acc[TREND_VARIANT],
            TREND_BASELINE: acc[TREND_BASELINE],
        },
        "statement": (
            f"{TREND_VARIANT} mean holdout accuracy {mean_variant:.4f} is "
            f"{relation} {TREND_BASELINE} at {mean_base:.4f}"
        ),
    }


def assemble_report(cells: list, plan: SplitPlan, side: int,
                    kinds: list[str], datasets: list[str],
                    alt_evaluated: bool) -> dict:
    """Bundle cells with their rankings, trend section, and protocol."""
    return {
        "cells": cells,
        "ranking": {
            "by_accuracy": rank_cells(cells, "accuracy"),
            "by_macro_f1": rank_cells(cells, "macro_f1"),
        },
        "trend": trend_section(cells),
        "protocol": {
            "holdout_fraction": plan.holdout_fraction,
            "train_fraction": plan.train_fraction,
            "batch_size": plan.batch_size,
            "seed": plan.seed,
            "feature_side": side,
            "models": list(kinds),
            "datasets": sorted(datasets),
            "alt_evaluated": alt_evaluated,
        },
    }


def write_grid_report(report: dict, out_dir: Path) -> None:
    """Write grid_report.json and the flat grid_report.csv."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "grid_report.json", "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(out_dir / "grid_report.csv", "w", encoding="utf-8",
              newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["dataset_id", "model", "accuracy", "macro_f1",
                         "overfit_gap"])
        for cell in report["cells"]:
            writer.writerow([
                cell["dataset_id"], cell["model"],
                f"{cell['accuracy']:.6f}", f"{cell['macro_f1']:.6f}",
                f"{cell['overfit_gap']:.6f}",
            ])


def run_grid(experiment: dict, plan: SplitPlan, kinds: list[str],
             out_dir: Path, side: int,
             params: LearnerParams = LearnerParams(),
             alt_experiment: dict | None = None,
             save_models: bool = True) -> dict:
    """Train kinds x datasets, evaluate holdouts, and write the reports.

    `experiment` maps variant id to its manifest. When `alt_experiment` is
    given, each cell also carries metrics over the alternate test set of
    the same variant id. Writes grid_report.json, grid_report.csv, and one
    checkpoint per cell under out_dir.
    """
    if not experiment:
        raise ValueError("experiment has no datasets")
    if not kinds:
        raise ValueError("no model kinds requested")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    cells: list = []
    audits: dict = {}

    for did in sorted(experiment):
        manifest = experiment[did]
        stream_man, hold_man = split_holdout(manifest, plan)
        log.info("dataset %s: stream %d, holdout %d", did, len(stream_man),
                 len(hold_man))
        models, series, scaler, audit = train_models_on_stream(
            stream_man, plan, kinds, side, params)
        audits[did] = {
            "fit": audit["fit"],
            "val": audit["val"],
            "holdout": {r.image_path for r in hold_man.records},
        }
        hold_metrics = evaluate_models(models, scaler, hold_man, side)
        alt_metrics = None
        if alt_experiment is not None:
            if did not in alt_experiment:
                raise ValueError(f"alternate experiment lacks dataset {did}")
            alt_metrics = evaluate_models(models, scaler, alt_experiment[did],
                                          side)
        for kind in kinds:
            train_acc, val_acc = series[kind]
            cell = {
                "dataset_id": did,
                "model": kind,
                "accuracy": hold_metrics[kind]["accuracy"],
                "macro_f1": hold_metrics[kind]["macro_f1"],
                "per_class_f1": hold_metrics[kind]["per_class_f1"],
                "progressive_train_acc": train_acc,
                "progressive_val_acc": val_acc,
                "overfit_gap": overfit_gap(train_acc, val_acc),
                "sample_counts": {
                    "stream": len(stream_man),
                    "holdout": len(hold_man),
                    "batches": len(train_acc),
                },
            }
            if alt_metrics is not None:
                cell["alt_accuracy"] = alt_metrics[kind]["accuracy"]
                cell["alt_macro_f1"] = alt_metrics[kind]["macro_f1"]
                cell["sample_counts"]["alt"] = len(alt_experiment[did])
            cells.append(cell)
            if save_models:
                save_checkpoint(out_dir / "checkpoints" / f"{did}_{kind}.npz",
                                models[kind], scaler)

    report = assemble_report(cells, plan, side, kinds, sorted(experiment),
                             alt_experiment is not None)
    write_grid_report(report, out_dir)
    report["audits"] = audits
    return report
