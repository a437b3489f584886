"""Assembly of the fifteen dataset variants from the balanced corpus.

Seven variants store binary edge masks (three single detectors and their
four combinations), seven overlay the same masks onto the source RGB
images, and one is a byte-for-byte copy of the balanced corpus. Building
all variants in one pass shares the per-image detector work; the output is
identical to building each variant separately.
"""

from __future__ import annotations

import json
import shutil
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .edges import (EdgeParams, canny, combine, import_edges, overlay,
                    prewitt, thick_edge)
from .imaging import mask_to_image, read_png, write_png
from .ingest import Manifest, SampleRecord
from .parallel import map_ordered

DETECTOR_ORDER = ("canny", "hed", "prewitt")

VARIANT_IDS = (
    "base_rgb",
    "canny",
    "hed",
    "prewitt",
    "canny_hed",
    "hed_prewitt",
    "canny_prewitt",
    "all_edges",
    "rgb_canny",
    "rgb_hed",
    "rgb_prewitt",
    "rgb_canny_hed",
    "rgb_hed_prewitt",
    "rgb_canny_prewitt",
    "rgb_all_edges",
)

_DETECTOR_SETS = {
    "base_rgb": (),
    "canny": ("canny",),
    "hed": ("hed",),
    "prewitt": ("prewitt",),
    "canny_hed": ("canny", "hed"),
    "hed_prewitt": ("hed", "prewitt"),
    "canny_prewitt": ("canny", "prewitt"),
    "all_edges": ("canny", "hed", "prewitt"),
}


@dataclass(frozen=True)
class VariantSpec:
    id: str
    detectors: tuple
    overlay: bool

    def __post_init__(self) -> None:
        if self.id not in VARIANT_IDS:
            raise ValueError(f"unknown variant id {self.id!r}")
        if self.id == "base_rgb":
            if self.detectors or self.overlay:
                raise ValueError("base_rgb takes no detectors and no overlay")
        else:
            if not self.detectors:
                raise ValueError(f"variant {self.id} needs detectors")
            if self.overlay != self.id.startswith("rgb_"):
                raise ValueError(f"variant {self.id} overlay flag mismatch")
        for d in self.detectors:
            if d not in DETECTOR_ORDER:
                raise ValueError(f"unknown detector {d!r}")


def enumerate_variants() -> list[VariantSpec]:
    """The fifteen variants in stable report order."""
    out = []
    for vid in VARIANT_IDS:
        key = vid[4:] if vid.startswith("rgb_") else vid
        out.append(VariantSpec(id=vid, detectors=_DETECTOR_SETS[key],
                               overlay=vid.startswith("rgb_")))
    return out


def _mask_for(img: np.ndarray, detector: str, params: EdgeParams,
              import_root: str | None, rel_path: str) -> np.ndarray:
    if detector == "canny":
        return canny(img, params.canny)
    if detector == "prewitt":
        return prewitt(img, params.prewitt)
    if detector == "hed":
        if import_root is not None:
            h, w = img.shape[:2]
            return import_edges(Path(import_root) / rel_path, (w, h))
        return thick_edge(img, params.thick)
    raise ValueError(f"unknown detector {detector!r}")


def _variant_task(args: tuple) -> None:
    (src_root, rel_path, variants, params, out_root, color, import_root) = args
    src = Path(src_root) / rel_path
    img = None
    masks: dict = {}

    for vid, detectors, do_overlay in variants:
        dst = Path(out_root) / vid / rel_path
        if not detectors:
            dst.parent.mkdir(parents=True, exist_ok=True)
            shutil.copyfile(src, dst)
            continue
        if img is None:
            img = read_png(src)
        for d in detectors:
            if d not in masks:
                masks[d] = _mask_for(img, d, params, import_root, rel_path)
        got = [masks[d] for d in detectors]
        mask = got[0] if len(got) == 1 else combine(got)
        if do_overlay:
            write_png(dst, overlay(img, mask, color))
        else:
            write_png(dst, mask_to_image(mask))


def _variant_manifest(src: Manifest, spec: VariantSpec) -> Manifest:
    if spec.id == "base_rgb":
        records = [SampleRecord(r.image_path, r.class_id, r.class_name, r.bbox,
                                r.provenance, list(r.aug_ops))
                   for r in src.records]
    else:
        prov = "overlay" if spec.overlay else "edge"
        records = [SampleRecord(r.image_path, r.class_id, r.class_name, r.bbox,
                                prov, list(r.aug_ops))
                   for r in src.records]
    return Manifest(dataset_id=spec.id, num_classes=src.num_classes,
                    records=records)


def _write_variant_meta(out_dir: Path, spec: VariantSpec, params: EdgeParams,
                        import_root: str | None) -> None:
    hed_source = None
    if "hed" in spec.detectors:
        hed_source = "import" if import_root is not None else "thick_proxy"
    meta = {
        "variant_id": spec.id,
        "detectors": list(spec.detectors),
        "overlay": spec.overlay,
        "hed_source": hed_source,
        "params": {
            "canny": {"sigma": params.canny.sigma, "low": params.canny.low,
                      "high": params.canny.high},
            "prewitt": {"threshold": params.prewitt.threshold},
            "thick": {"threshold": params.thick.threshold,
                      "dilate_radius": params.thick.dilate_radius},
        },
    }
    with open(out_dir / "variant.json", "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")


def build_variants(src: Manifest, specs: list[VariantSpec],
                   params: EdgeParams = EdgeParams(),
                   out_dir: Path = Path("variants"),
                   overlay_color: tuple = (0, 0, 0),
                   import_root: Path | None = None,
                   jobs: int = 1) -> dict:
    """Build the requested variants in one pass over the source images.

    Returns {variant_id: Manifest}. Detector masks are computed once per
    source image and reused across the variants that need them, which
    cannot change the output bytes relative to one-variant-at-a-time runs.
    """
    if src.root is None:
        raise ValueError("source manifest must be loaded from disk")
    if not specs:
        raise ValueError("no variants requested")
    seen = set()
    for spec in specs:
        if spec.id in seen:
            raise ValueError(f"duplicate variant {spec.id}")
        seen.add(spec.id)
    out_dir = Path(out_dir)
    import_str = str(import_root) if import_root is not None else None
    variant_args = [(s.id, s.detectors, s.overlay) for s in specs]

    tasks = [
        (str(src.root), rec.image_path, variant_args, params, str(out_dir),
         tuple(overlay_color), import_str)
        for rec in src.records
    ]
    map_ordered(_variant_task, tasks, jobs=jobs)

    built: dict = {}
    for spec in specs:
        man = _variant_manifest(src, spec)
        man.save(out_dir / spec.id / "manifest.jsonl")
        _write_variant_meta(out_dir / spec.id, spec, params, import_str)
        built[spec.id] = man
    return built


def build_variant(src: Manifest, spec: VariantSpec,
                  params: EdgeParams = EdgeParams(),
                  out_dir: Path = Path("variants"),
                  overlay_color: tuple = (0, 0, 0),
                  import_root: Path | None = None,
                  jobs: int = 1) -> Manifest:
    """Build a single variant under out_dir/<variant_id>/."""
    return build_variants(src, [spec], params, out_dir, overlay_color,
                          import_root, jobs)[spec.id]


def build_experiment(src: Manifest, params: EdgeParams = EdgeParams(),
                     out_dir: Path = Path("variants"),
                     overlay_color: tuple = (0, 0, 0),
                     import_root: Path | None = None,
                     jobs: int = 1) -> dict:
    """Build all fifteen variants and write the experiment index."""
    specs = enumerate_variants()
    built = build_variants(src, specs, params, out_dir, overlay_color,
                           import_root, jobs)
    index = {
        "num_classes": src.num_classes,
        "record_count": len(src),
        "source_dataset": src.dataset_id,
        "variants": {vid: f"{vid}/manifest.jsonl" for vid in VARIANT_IDS},
    }
    with open(Path(out_dir) / "experiment.json", "w", encoding="utf-8") as fh:
        json.dump(index, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return built


def load_experiment(out_dir: Path) -> dict:
    """Load {variant_id: Manifest} from an experiment.json directory."""
    out_dir = Path(out_dir)
    with open(out_dir / "experiment.json", "r", encoding="utf-8") as fh:
        index = json.load(fh)
    built = {}
    for vid, rel in index["variants"].items():
        built[vid] = Manifest.load(out_dir / rel)
    return built
