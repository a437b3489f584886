"""Class balancing and the ten augmentation operations.

Each augmented copy applies exactly one op. An AugOpSpec fully determines
the output: explicit params are validated against the legal ranges, missing
ones are drawn from the spec's own seed, so identical (image, spec) pairs
always produce identical bytes.
"""

from __future__ import annotations

import math
import shutil
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .imaging import gaussian_blur, read_png, resize, validate_image, write_png
from .ingest import Manifest, SampleRecord
from .parallel import map_ordered
from .rng import child_seed, stream

WHITE = 255

OP_KINDS = (
    "contrast",
    "noise",
    "brightness",
    "blur",
    "rotation",
    "random_erase",
    "random_crop",
    "flip_lr",
    "flip_tb",
    "skew",
)

# Legal parameter ranges, checked for explicit params and used when sampling.
_RANGES = {
    "contrast": {"factor": (0.7, 1.3)},
    "brightness": {"factor": (0.6, 1.4)},
    "noise": {"sigma": (0.0, 25.0)},        # exclusive lower bound
    "blur": {"sigma": (0.5, 1.5)},
    "rotation": {"angle": (-45.0, 45.0)},
    "random_erase": {"frac": (0.0, 0.2), "aspect": (0.5, 2.0),
                     "fx": (0.0, 1.0), "fy": (0.0, 1.0)},
    "random_crop": {"keep_x": (0.8, 1.0), "keep_y": (0.8, 1.0),
                    "fx": (0.0, 1.0), "fy": (0.0, 1.0)},
    "flip_lr": {},
    "flip_tb": {},
    "skew": {"shear": (-0.3, 0.3)},
}


@dataclass(frozen=True)
class AugOpSpec:
    """One augmentation op: kind, optional explicit params, and a seed."""

    kind: str
    params: dict = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self) -> None:
        if self.kind not in OP_KINDS:
            raise ValueError(f"unknown augmentation kind {self.kind!r}")
        legal = _RANGES[self.kind]
        for name, value in self.params.items():
            if name == "axis" and self.kind == "skew":
                if value not in ("h", "v"):
                    raise ValueError(f"skew axis must be 'h' or 'v', got {value!r}")
                continue
            if name not in legal:
                raise ValueError(f"{self.kind} has no parameter {name!r}")
            low, high = legal[name]
            if not low <= float(value) <= high:
                raise ValueError(
                    f"{self.kind}.{name}={value} outside [{low}, {high}]"
                )
        if self.kind == "noise" and "sigma" in self.params:
            if float(self.params["sigma"]) <= 0.0:
                raise ValueError("noise sigma must be > 0")
        if self.kind == "random_erase" and "frac" in self.params:
            if float(self.params["frac"]) <= 0.0:
                raise ValueError("random_erase frac must be > 0")
        if self.kind == "random_crop":
            kx = float(self.params.get("keep_x", 1.0))
            ky = float(self.params.get("keep_y", 1.0))
            if kx * ky < 0.8:
                raise ValueError(f"random_crop retains {kx * ky:.3f} < 0.8 of area")


def _resolve_params(spec: AugOpSpec, rng: np.random.Generator) -> dict:
    # Draw order is fixed per kind so a given seed always yields the same op.
    p = dict(spec.params)

    def draw(name, low, high):
        if name not in p:
            p[name] = float(rng.uniform(low, high))

    kind = spec.kind
    if kind == "contrast":
        draw("factor", 0.7, 1.3)
    elif kind == "brightness":
        draw("factor", 0.6, 1.4)
    elif kind == "noise":
        draw("sigma", 3.0, 25.0)
    elif kind == "blur":
        draw("sigma", 0.5, 1.5)
    elif kind == "rotation":
        draw("angle", -45.0, 45.0)
    elif kind == "random_erase":
        draw("frac", 0.05, 0.2)
        draw("aspect", 0.5, 2.0)
        draw("fx", 0.0, 1.0)
        draw("fy", 0.0, 1.0)
    elif kind == "random_crop":
        draw("keep_x", 0.9, 1.0)
        # Keep the retained area at >= 0.8 even when keep_x was explicit.
        draw("keep_y", max(0.9, 0.8 / float(p["keep_x"])), 1.0)
        draw("fx", 0.0, 1.0)
        draw("fy", 0.0, 1.0)
    elif kind == "skew":
        draw("shear", -0.3, 0.3)
        if "axis" not in p:
            p["axis"] = "h" if rng.integers(2) == 0 else "v"
    return p


def _clamp8(data: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(data), 0, 255).astype(np.uint8)


def _warp_affine(img: np.ndarray, a11: float, a12: float, a21: float,
                 a22: float, fill: int) -> np.ndarray:
    """Inverse-map the image through a centered 2x2 affine, bilinear sampled.

    Output pixels whose source point falls outside the image get `fill`.
    """
    h, w = img.shape[:2]
    cy = (h - 1) / 2.0
    cx = (w - 1) / 2.0
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    dx = xx - cx
    dy = yy - cy
    sx = a11 * dx + a12 * dy + cx
    sy = a21 * dx + a22 * dy + cy

    outside = (sx < 0) | (sx > w - 1) | (sy < 0) | (sy > h - 1)
    sxc = np.clip(sx, 0.0, w - 1.0)
    syc = np.clip(sy, 0.0, h - 1.0)
    x0 = np.floor(sxc).astype(np.intp)
    y0 = np.floor(syc).astype(np.intp)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = sxc - x0
    fy = syc - y0

    data = img.astype(np.float64)
    if img.ndim == 3:
        fx = fx[..., np.newaxis]
        fy = fy[..., np.newaxis]
    top = data[y0, x0] * (1.0 - fx) + data[y0, x1] * fx
    bot = data[y1, x0] * (1.0 - fx) + data[y1, x1] * fx
    out = top * (1.0 - fy) + bot * fy
    out = _clamp8(out)
    out[outside] = fill
    return out


def _erase_rect(h: int, w: int, frac: float, aspect: float, fx: float,
                fy: float) -> tuple[int, int, int, int]:
    area = frac * h * w
    rw = max(1, int(math.floor(math.sqrt(area * aspect))))
    rw = min(rw, w)
    rh = max(1, int(math.floor(area / rw)))
    rh = min(rh, h)
    x0 = int(round(fx * (w - rw)))
    y0 = int(round(fy * (h - rh)))
    return x0, y0, rw, rh


def apply_augmentation(img: np.ndarray, spec: AugOpSpec) -> np.ndarray:
    """Apply one op; output has the source's dtype, dims, and channel count."""
    img = validate_image(img)
    rng = stream(spec.seed, "aug", spec.kind)
    p = _resolve_params(spec, rng)
    h, w = img.shape[:2]
    kind = spec.kind

    if kind == "contrast":
        return _clamp8((img.astype(np.float64) - 128.0) * p["factor"] + 128.0)
    if kind == "brightness":
        return _clamp8(img.astype(np.float64) * p["factor"])
    if kind == "noise":
        noise = rng.normal(0.0, p["sigma"], size=img.shape)
        return _clamp8(img.astype(np.float64) + noise)
    if kind == "blur":
        return gaussian_blur(img, p["sigma"])
    if kind == "rotation":
        theta = math.radians(p["angle"])
        c, s = math.cos(theta), math.sin(theta)
        # Inverse of a rotation is its transpose.
        return _warp_affine(img, c, s, -s, c, WHITE)
    if kind == "random_erase":
        x0, y0, rw, rh = _erase_rect(h, w, p["frac"], p["aspect"], p["fx"], p["fy"])
        out = img.copy()
        out[y0:y0 + rh, x0:x0 + rw] = WHITE
        return out
    if kind == "random_crop":
        cw = min(w, int(math.ceil(p["keep_x"] * w)))
        ch = min(h, int(math.ceil(p["keep_y"] * h)))
        x0 = int(round(p["fx"] * (w - cw)))
        y0 = int(round(p["fy"] * (h - ch)))
        return resize(img[y0:y0 + ch, x0:x0 + cw], w, h)
    if kind == "flip_lr":
        return img[:, ::-1].copy()
    if kind == "flip_tb":
        return img[::-1, :].copy()
    if kind == "skew":
        s = p["shear"]
        if p["axis"] == "h":
            return _warp_affine(img, 1.0, -s, 0.0, 1.0, WHITE)
        return _warp_affine(img, 1.0, 0.0, -s, 1.0, WHITE)
    raise AssertionError(f"unhandled kind {kind}")


# ---------------------------------------------------------------------------
# Balancing
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BalanceEntry:
    class_id: int
    current: int
    factor: int
    target: int


@dataclass(frozen=True)
class BalancePlan:
    entries: tuple

    @property
    def target(self) -> int:
        return self.entries[0].target

    def by_class(self) -> dict:
        return {e.class_id: e for e in self.entries}


def compute_balance_plan(counts: dict, target: int | None = None) -> BalancePlan:
    """Per-class balancing factors: ceil(target / count), auto target = max.

    An explicit target below the largest class count is rejected; this stage
    only adds images.
    """
    if not counts:
        raise ValueError("counts must be non-empty")
    for cid, n in counts.items():
        if n <= 0:
            raise ValueError(f"class {cid} has non-positive count {n}")
    top = max(counts.values())
    if target is None:
        target = top
    elif target < top:
        raise ValueError(f"target {target} below largest class count {top}")
    entries = tuple(
        BalanceEntry(cid, n, math.ceil(target / n), target)
        for cid, n in sorted(counts.items())
    )
    return BalancePlan(entries)


def _augment_task(args: tuple) -> None:
    src_path, dst_path, kind, op_seed = args
    img = read_png(src_path)
    out = apply_augmentation(img, AugOpSpec(kind, seed=op_seed))
    write_png(dst_path, out)


def run_balance_augment(manifest: Manifest, plan: BalancePlan,
                        op_mix: tuple = OP_KINDS, seed: int = 0,
                        out_dir: Path = Path("balanced"), jobs: int = 1,
                        dataset_id: str = "balanced") -> Manifest:
    """Copy every source image and add augmented copies up to the target.

    The shortfall per class is spread round-robin over its sources (sorted
    by path), so each source spawns factor-1 copies give or take one. Each
    copy applies one op drawn from `op_mix` under a per-copy seed.
    """
    if manifest.root is None:
        raise ValueError("manifest must be loaded from or saved to disk first")
    if not op_mix:
        raise ValueError("op_mix must be non-empty")
    for kind in op_mix:
        if kind not in OP_KINDS:
            raise ValueError(f"unknown augmentation kind {kind!r}")
    by_class = plan.by_class()
    counts = manifest.class_counts()
    for cid, n in counts.items():
        if cid not in by_class:
            raise ValueError(f"plan does not cover class {cid}")
        if by_class[cid].current != n:
            raise ValueError(
                f"plan count {by_class[cid].current} != manifest count {n} "
                f"for class {cid}"
            )
    out_dir = Path(out_dir)

    records: list = []
    tasks: list = []
    copy_jobs: list = []

    for rec in manifest.records:
        dst_rel = f"{rec.class_name}/{Path(rec.image_path).name}"
        copy_jobs.append((manifest.resolve(rec), out_dir / dst_rel))
        records.append(SampleRecord(
            image_path=dst_rel,
            class_id=rec.class_id,
            class_name=rec.class_name,
            bbox=rec.bbox,
            provenance=rec.provenance,
            aug_ops=list(rec.aug_ops),
        ))

    grouped: dict = {}
    for rec in manifest.records:
        grouped.setdefault(rec.class_id, []).append(rec)
    for cid in grouped:
        grouped[cid].sort(key=lambda r: r.image_path)

    aug_records: list = []
    for cid in sorted(grouped):
        sources = grouped[cid]
        need = by_class[cid].target - len(sources)
        for j in range(need):
            src = sources[j % len(sources)]
            copy_idx = j // len(sources)
            pick = stream(seed, "augment", cid, j)
            kind = op_mix[int(pick.integers(len(op_mix)))]
            op_seed = child_seed(seed, "augment", cid, j, 1)
            stem = Path(src.image_path).stem
            dst_rel = f"{src.class_name}/{stem}_a{copy_idx}_{kind}.png"
            tasks.append((str(manifest.resolve(src)), str(out_dir / dst_rel),
                          kind, op_seed))
            aug_records.append((src.image_path, copy_idx, SampleRecord(
                image_path=dst_rel,
                class_id=cid,
                class_name=src.class_name,
                bbox=src.bbox,
                provenance="augmented",
                aug_ops=[kind],
            )))

    for src_path, dst_path in copy_jobs:
        dst_path.parent.mkdir(parents=True, exist_ok=True)
        shutil.copyfile(src_path, dst_path)
    map_ordered(_augment_task, tasks, jobs=jobs)

    aug_records.sort(key=lambda item: (item[0], item[1]))
    records.extend(item[2] for item in aug_records)

    out = Manifest(dataset_id=dataset_id, num_classes=manifest.num_classes,
                   records=records)
    out.save(out_dir / "manifest.jsonl")
    return out
