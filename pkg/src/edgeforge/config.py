"""Experiment configuration: JSON file over defaults, validated once.

A config file only states what it changes; everything else comes from
DEFAULTS. Unknown keys are rejected so typos fail loudly instead of
silently running with a default.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from pathlib import Path

from .augment import OP_KINDS
from .edges import (CannyParams, EdgeParams, PrewittParams, ThickParams)
from .evaluate import SplitPlan
from .learn import MODEL_KINDS, LearnerParams


class ConfigError(ValueError):
    """Malformed or contradictory configuration."""


DEFAULTS: dict = {
    "workdir": "runs/exp",
    "seed": 0,
    "jobs": 1,
    "feature_side": 200,
    "corpus": {
        "num_classes": 10,
        "per_class": 200,
        "orientations": 8,
        "canvas": 96,
        "background": "white",
    },
    "alt_corpus": {
        "enabled": False,
        "per_class": 40,
        "orientations": 8,
        "canvas": 96,
        "background": "textured",
    },
    "ingest": {
        "bin_threshold": 240,
        "margin": 5,
        "annotation_order": "height_first",
        "bbox_source": "detect",
    },
    "augment": {
        "target": None,
        "op_mix": list(OP_KINDS),
    },
    "edges": {
        "canny": {"sigma": 1.4, "low": 0.1, "high": 0.2},
        "prewitt": {"threshold": 0.15},
        "thick": {"threshold": 0.1, "dilate_radius": 2},
        "overlay_color": [0, 0, 0],
        "import_root": None,
    },
    "split": {
        "holdout_fraction": 0.2,
        "train_fraction": 0.75,
        "batch_size": 5000,
    },
    "models": {
        "kinds": list(MODEL_KINDS),
        "eta0": 0.01,
        "alpha": 1e-4,
        "c_agg": 1.0,
    },
}


def deep_merge(base: dict, override: dict, path: str = "") -> dict:
    """Merge override into a copy of base; keys absent from base error."""
    out = copy.deepcopy(base)
    for key, value in override.items():
        here = f"{path}.{key}" if path else key
        if key not in base:
            raise ConfigError(f"unknown config key {here!r}")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"config key {here!r} must be an object")
            out[key] = deep_merge(base[key], value, here)
        else:
            out[key] = copy.deepcopy(value)
    return out


def _require(cond: bool, message: str) -> None:
    if not cond:
        raise ConfigError(message)


def _int_in(d: dict, key: str, lo: int, section: str) -> int:
    value = d[key]
    _require(isinstance(value, int) and not isinstance(value, bool),
             f"{section}.{key} must be an integer")
    _require(value >= lo, f"{section}.{key} must be >= {lo}")
    return value


@dataclass(frozen=True)
class CorpusConfig:
    num_classes: int
    per_class: int
    orientations: int
    canvas: int
    background: str

    def __post_init__(self) -> None:
        _require(self.num_classes >= 2, "corpus.num_classes must be >= 2")
        _require(self.orientations >= 1, "corpus.orientations must be >= 1")
        _require(self.per_class >= self.orientations,
                 "corpus.per_class must be >= corpus.orientations")
        _require(self.canvas >= 16, "corpus.canvas must be >= 16")
        _require(self.background in ("white", "textured"),
                 "corpus.background must be 'white' or 'textured'")


@dataclass(frozen=True)
class AltCorpusConfig:
    enabled: bool
    per_class: int
    orientations: int
    canvas: int
    background: str

    def __post_init__(self) -> None:
        _require(isinstance(self.enabled, bool),
                 "alt_corpus.enabled must be true or false")
        _require(self.orientations >= 1, "alt_corpus.orientations must be >= 1")
        _require(self.per_class >= self.orientations,
                 "alt_corpus.per_class must be >= alt_corpus.orientations")
        _require(self.canvas >= 16, "alt_corpus.canvas must be >= 16")
        _require(self.background in ("white", "textured"),
                 "alt_corpus.background must be 'white' or 'textured'")


@dataclass(frozen=True)
class IngestConfig:
    bin_threshold: int
    margin: int
    annotation_order: str
    bbox_source: str

    def __post_init__(self) -> None:
        _require(0 < self.bin_threshold <= 255,
                 "ingest.bin_threshold must be in 1..255")
        _require(self.margin >= 0, "ingest.margin must be >= 0")
        _require(self.annotation_order in ("height_first", "width_first"),
                 "ingest.annotation_order must be 'height_first' or 'width_first'")
        _require(self.bbox_source in ("detect", "manifest"),
                 "ingest.bbox_source must be 'detect' or 'manifest'")


@dataclass(frozen=True)
class AugmentConfig:
    target: int | None
    op_mix: tuple

    def __post_init__(self) -> None:
        if self.target is not None:
            _require(isinstance(self.target, int)
                     and not isinstance(self.target, bool)
                     and self.target >= 1,
                     "augment.target must be null or a positive integer")
        _require(len(self.op_mix) > 0, "augment.op_mix must be non-empty")
        for kind in self.op_mix:
            _require(kind in OP_KINDS,
                     f"augment.op_mix has unknown kind {kind!r}")


@dataclass(frozen=True)
class EdgesConfig:
    params: EdgeParams
    overlay_color: tuple
    import_root: Path | None

    def __post_init__(self) -> None:
        _require(len(self.overlay_color) == 3
                 and all(isinstance(c, int) and 0 <= c <= 255
                         for c in self.overlay_color),
                 "edges.overlay_color must be three integers in 0..255")


@dataclass(frozen=True)
class ModelsConfig:
    kinds: tuple
    params: LearnerParams

    def __post_init__(self) -> None:
        _require(len(self.kinds) > 0, "models.kinds must be non-empty")
        for kind in self.kinds:
            _require(kind in MODEL_KINDS, f"unknown model kind {kind!r}")
        _require(len(set(self.kinds)) == len(self.kinds),
                 "models.kinds has duplicates")


@dataclass(frozen=True)
class ExperimentConfig:
    workdir: Path
    seed: int
    jobs: int
    feature_side: int
    corpus: CorpusConfig
    alt_corpus: AltCorpusConfig
    ingest: IngestConfig
    augment: AugmentConfig
    edges: EdgesConfig
    split: SplitPlan
    models: ModelsConfig
    raw: dict = field(compare=False, repr=False, default_factory=dict)

    def __post_init__(self) -> None:
        _require(self.seed >= 0, "seed must be >= 0")
        _require(self.jobs >= 1, "jobs must be >= 1")
        _require(self.feature_side >= 1, "feature_side must be >= 1")

    def to_dict(self) -> dict:
        """The fully resolved config as plain JSON-able data."""
        return copy.deepcopy(self.raw)


def _build(merged: dict) -> ExperimentConfig:
    corpus = CorpusConfig(
        num_classes=_int_in(merged["corpus"], "num_classes", 0, "corpus"),
        per_class=_int_in(merged["corpus"], "per_class", 1, "corpus"),
        orientations=_int_in(merged["corpus"], "orientations", 1, "corpus"),
        canvas=_int_in(merged["corpus"], "canvas", 1, "corpus"),
        background=merged["corpus"]["background"],
    )
    alt = AltCorpusConfig(
        enabled=merged["alt_corpus"]["enabled"],
        per_class=_int_in(merged["alt_corpus"], "per_class", 1, "alt_corpus"),
        orientations=_int_in(merged["alt_corpus"], "orientations", 1,
                             "alt_corpus"),
        canvas=_int_in(merged["alt_corpus"], "canvas", 1, "alt_corpus"),
        background=merged["alt_corpus"]["background"],
    )
    ingest = IngestConfig(
        bin_threshold=_int_in(merged["ingest"], "bin_threshold", 1, "ingest"),
        margin=_int_in(merged["ingest"], "margin", 0, "ingest"),
        annotation_order=merged["ingest"]["annotation_order"],
        bbox_source=merged["ingest"]["bbox_source"],
    )
    augment = AugmentConfig(
        target=merged["augment"]["target"],
        op_mix=tuple(merged["augment"]["op_mix"]),
    )
    e = merged["edges"]
    try:
        params = EdgeParams(
            canny=CannyParams(**e["canny"]),
            prewitt=PrewittParams(**e["prewitt"]),
            thick=ThickParams(**e["thick"]),
        )
    except TypeError as exc:
        raise ConfigError(f"edges: {exc}") from exc
    import_root = e["import_root"]
    edges = EdgesConfig(
        params=params,
        overlay_color=tuple(e["overlay_color"]),
        import_root=None if import_root is None else Path(import_root),
    )
    split = SplitPlan(
        holdout_fraction=merged["split"]["holdout_fraction"],
        train_fraction=merged["split"]["train_fraction"],
        batch_size=_int_in(merged["split"], "batch_size", 2, "split"),
        seed=merged["seed"],
    )
    models = ModelsConfig(
        kinds=tuple(merged["models"]["kinds"]),
        params=LearnerParams(
            eta0=merged["models"]["eta0"],
            alpha=merged["models"]["alpha"],
            c_agg=merged["models"]["c_agg"],
        ),
    )
    return ExperimentConfig(
        workdir=Path(merged["workdir"]),
        seed=_int_in(merged, "seed", 0, "top-level"),
        jobs=_int_in(merged, "jobs", 1, "top-level"),
        feature_side=_int_in(merged, "feature_side", 1, "top-level"),
        corpus=corpus,
        alt_corpus=alt,
        ingest=ingest,
        augment=augment,
        edges=edges,
        split=split,
        models=models,
        raw=merged,
    )


def load_config(path: Path | str | None = None,
                overrides: dict | None = None) -> ExperimentConfig:
    """Load a JSON config over DEFAULTS, then apply CLI overrides.

    `overrides` uses the same nested schema (typically just workdir, seed,
    jobs). Validation errors raise ConfigError.
    """
    merged = copy.deepcopy(DEFAULTS)
    if path is not None:
        path = Path(path)
        try:
            with open(path, "r", encoding="utf-8") as fh:
                data = json.load(fh)
        except FileNotFoundError as exc:
            raise ConfigError(f"config file not found: {path}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}") \
                from exc
        if not isinstance(data, dict):
            raise ConfigError(f"config file {path} must hold a JSON object")
        merged = deep_merge(merged, data)
    if overrides:
        merged = deep_merge(merged, overrides)
    try:
        return _build(merged)
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
