"""Corpus generation, foreground extraction, and manifest bookkeeping.

A corpus is a directory of PNG scenes plus a JSONL manifest. Each manifest
row records one sample: relative image path, class id/name, a pixel bbox,
provenance, and the list of augmentation ops applied (empty until the
balancing stage). The synthetic generator renders flat-shaded silhouettes on
a white or textured background; the ingest stage locates the object, crops
it with a margin, and writes a normalized annotation line per crop.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np
from scipy import ndimage

from .imaging import resize, to_grayscale, validate_image, write_png, read_png
from .parallel import map_ordered
from .rng import stream

_EIGHT = np.ones((3, 3), dtype=bool)


class NoForegroundError(ValueError):
    """No pixel fell below the foreground threshold."""


@dataclass(frozen=True)
class BBox:
    """Axis-aligned pixel box: top-left corner plus width/height."""

    x0: int
    y0: int
    w: int
    h: int

    def __post_init__(self) -> None:
        for name in ("x0", "y0", "w", "h"):
            value = getattr(self, name)
            if not isinstance(value, (int, np.integer)):
                raise TypeError(f"{name} must be an int, got {type(value).__name__}")
            object.__setattr__(self, name, int(value))
        if self.w <= 0 or self.h <= 0:
            raise ValueError(f"bbox must have positive size, got {self.w}x{self.h}")
        if self.x0 < 0 or self.y0 < 0:
            raise ValueError(f"bbox corner must be non-negative, got ({self.x0}, {self.y0})")

    @property
    def x1(self) -> int:
        return self.x0 + self.w

    @property
    def y1(self) -> int:
        return self.y0 + self.h

    def expand(self, margin: int, img_w: int, img_h: int) -> "BBox":
        """Grow by `margin` on every side, clipped to the image bounds."""
        if margin < 0:
            raise ValueError("margin must be >= 0")
        x0 = max(0, self.x0 - margin)
        y0 = max(0, self.y0 - margin)
        x1 = min(img_w, self.x1 + margin)
        y1 = min(img_h, self.y1 + margin)
        return BBox(x0, y0, x1 - x0, y1 - y0)

    def to_dict(self) -> dict:
        return {"x0": self.x0, "y0": self.y0, "w": self.w, "h": self.h}

    @classmethod
    def from_dict(cls, d: dict) -> "BBox":
        return cls(d["x0"], d["y0"], d["w"], d["h"])


@dataclass
class SampleRecord:
    """One manifest row."""

    image_path: str
    class_id: int
    class_name: str
    bbox: BBox
    provenance: str
    aug_ops: list = field(default_factory=list)

    def to_json(self) -> str:
        row = {
            "image_path": self.image_path,
            "class_id": self.class_id,
            "class_name": self.class_name,
            "bbox": self.bbox.to_dict(),
            "provenance": self.provenance,
            "aug_ops": list(self.aug_ops),
        }
        return json.dumps(row, separators=(", ", ": "))

    @classmethod
    def from_json(cls, line: str) -> "SampleRecord":
        row = json.loads(line)
        return cls(
            image_path=row["image_path"],
            class_id=int(row["class_id"]),
            class_name=row["class_name"],
            bbox=BBox.from_dict(row["bbox"]),
            provenance=row["provenance"],
            aug_ops=list(row["aug_ops"]),
        )


@dataclass
class Manifest:
    """A dataset: its id, the class count, and one record per image.

    `root` is the directory image paths are relative to; it is set by
    load/save and ignored for equality.
    """

    dataset_id: str
    num_classes: int
    records: list
    root: Path | None = field(default=None, compare=False)

    def __post_init__(self) -> None:
        if self.num_classes < 1:
            raise ValueError("num_classes must be >= 1")

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self) -> Iterator[SampleRecord]:
        return iter(self.records)

    def class_counts(self) -> dict:
        counts = {c: 0 for c in range(self.num_classes)}
        for rec in self.records:
            counts[rec.class_id] += 1
        return counts

    def class_names(self) -> dict:
        names: dict = {}
        for rec in self.records:
            names.setdefault(rec.class_id, rec.class_name)
        return names

    def resolve(self, rec: SampleRecord) -> Path:
        if self.root is None:
            raise ValueError("manifest has no root directory")
        return self.root / rec.image_path

    def validate(self) -> None:
        seen_paths: set = set()
        names: dict = {}
        for rec in self.records:
            if not 0 <= rec.class_id < self.num_classes:
                raise ValueError(
                    f"class_id {rec.class_id} outside [0, {self.num_classes})"
                )
            if rec.image_path in seen_paths:
                raise ValueError(f"duplicate image_path {rec.image_path!r}")
            seen_paths.add(rec.image_path)
            prior = names.setdefault(rec.class_id, rec.class_name)
            if prior != rec.class_name:
                raise ValueError(
                    f"class {rec.class_id} has two names: {prior!r}, {rec.class_name!r}"
                )
        missing = [c for c in range(self.num_classes) if c not in names]
        if missing:
            raise ValueError(f"classes with no samples: {missing}")

    def save(self, path: Path) -> None:
        self.validate()
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8") as fh:
            for rec in self.records:
                fh.write(rec.to_json() + "\n")
        self.root = path.parent

    @classmethod
    def load(cls, path: Path, dataset_id: str | None = None,
             num_classes: int | None = None) -> "Manifest":
        path = Path(path)
        records = []
        with open(path, "r", encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if line:
                    records.append(SampleRecord.from_json(line))
        if not records:
            raise ValueError(f"empty manifest: {path}")
        if num_classes is None:
            num_classes = max(rec.class_id for rec in records) + 1
        if dataset_id is None:
            dataset_id = path.parent.name
        man = cls(dataset_id=dataset_id, num_classes=num_classes,
                  records=records, root=path.parent)
        man.validate()
        return man


def extract_foreground_bbox(img: np.ndarray, bin_threshold: int = 240,
                            margin: int = 5) -> tuple[BBox, BBox]:
    """Locate the object against a light background.

    Pixels with grayscale value below `bin_threshold` are foreground; the
    largest 8-connected component wins (ties go to the lowest label, which
    appears first in scan order). Returns (tight, expanded) where expanded
    grows the tight box by `margin` and clips to the image.
    """
    validate_image(img)
    if not 0 < bin_threshold <= 255:
        raise ValueError("bin_threshold must be in (0, 255]")
    gray = to_grayscale(img)
    fg = gray < bin_threshold
    if not fg.any():
        raise NoForegroundError("no pixel below the foreground threshold")
    labels, n = ndimage.label(fg, structure=_EIGHT)
    if n > 1:
        sizes = np.bincount(labels.ravel())
        sizes[0] = 0
        keep = int(np.argmax(sizes))
        ys, xs = np.nonzero(labels == keep)
    else:
        ys, xs = np.nonzero(fg)
    tight = BBox(int(xs.min()), int(ys.min()),
                 int(xs.max() - xs.min() + 1), int(ys.max() - ys.min() + 1))
    h, w = gray.shape
    return tight, tight.expand(margin, w, h)


def crop(img: np.ndarray, box: BBox) -> np.ndarray:
    validate_image(img)
    h, w = img.shape[:2]
    if box.x1 > w or box.y1 > h:
        raise ValueError(f"bbox {box} exceeds image bounds {w}x{h}")
    return img[box.y0:box.y1, box.x0:box.x1].copy()


def format_annotation(class_name: str, box: BBox, img_w: int, img_h: int,
                      order: str = "height_first") -> str:
    """One annotation line: class name plus the normalized box.

    `order` selects the trailing pair: "height_first" writes height before
    width, "width_first" the reverse. Center coordinates always come first.
    """
    if img_w <= 0 or img_h <= 0:
        raise ValueError("image dims must be positive")
    if box.x1 > img_w or box.y1 > img_h:
        raise ValueError(f"bbox {box} exceeds image bounds {img_w}x{img_h}")
    xc = (box.x0 + box.w / 2.0) / img_w
    yc = (box.y0 + box.h / 2.0) / img_h
    wn = box.w / img_w
    hn = box.h / img_h
    if order == "height_first":
        tail = (hn, wn)
    elif order == "width_first":
        tail = (wn, hn)
    else:
        raise ValueError(f"unknown annotation order {order!r}")
    return f"{class_name} {xc:.6f} {yc:.6f} {tail[0]:.6f} {tail[1]:.6f}"


def write_annotation(path: Path, class_name: str, box: BBox, img_w: int,
                     img_h: int, order: str = "height_first") -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    line = format_annotation(class_name, box, img_w, img_h, order)
    path.write_text(line + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# Synthetic scenes
# ---------------------------------------------------------------------------
#
# Each class draws from one of 14 silhouette families; classes beyond 14
# reuse a family with a different variant (thickness / aspect), so shape
# outlines stay separable well past 30 classes. Builders get rotated,
# centered coordinate grids (u right, v down) and a scale s in pixels, and
# return a boolean mask.


def _aspect(k: int) -> float:
    return max(0.45, 1.0 - 0.23 * k)


def _chunk(k: int) -> float:
    return max(0.4, 1.0 - 0.28 * k)


def _shape_ellipse(u, v, s, k):
    a = 1.6 * _aspect(k)
    return (u / (a * s)) ** 2 + (v / s) ** 2 <= 1.0


def _shape_rect(u, v, s, k):
    a = 1.5 * _aspect(k)
    return (np.abs(u) <= a * s) & (np.abs(v) <= s)


def _shape_triangle(u, v, s, k):
    a = 1.2 * _aspect(k)
    return (v >= -s) & (v <= s) & (np.abs(u) <= a * (s - v) / 2.0)


def _shape_cross(u, v, s, k):
    t = 0.34 * _chunk(k)
    arm_u = (np.abs(u) <= s) & (np.abs(v) <= t * s)
    arm_v = (np.abs(v) <= s) & (np.abs(u) <= t * s)
    return arm_u | arm_v


def _shape_ring(u, v, s, k):
    r = 0.55 * _chunk(k) + 0.15
    rr = u * u + v * v
    return (rr <= s * s) & (rr >= (r * s) ** 2)


def _shape_u_channel(u, v, s, k):
    base = (np.abs(u) <= s) & (np.abs(v) <= s)
    nw = 0.5 * _chunk(k)
    notch = (np.abs(u) <= nw * s) & (v <= s * 0.3)
    return base & ~notch


def _shape_l_bracket(u, v, s, k):
    c = 0.55 + 0.3 * _chunk(k)
    base = (np.abs(u) <= s) & (np.abs(v) <= s)
    notch = (u > (c - 1.0) * s) & (v < (1.0 - c) * s)
    return base & ~notch


def _shape_tee(u, v, s, k):
    a = 1.2 * _aspect(k)
    t = 0.26 * _chunk(k)
    bar = (v >= -s) & (v <= -s + 0.5 * s) & (np.abs(u) <= a * s)
    stem = (np.abs(u) <= t * s) & (v >= -s) & (v <= s)
    return bar | stem


def _shape_spoked_disk(u, v, s, k):
    n = 3 + k
    t = 0.18
    mask = u * u + v * v <= (0.5 * s) ** 2
    for i in range(n):
        phi = math.pi * i / n
        uk = math.cos(phi) * u + math.sin(phi) * v
        vk = -math.sin(phi) * u + math.cos(phi) * v
        mask = mask | ((np.abs(uk) <= s) & (np.abs(vk) <= t * s))
    return mask


def _shape_hexagon(u, v, s, k):
    ua = u * _aspect(k)
    half = s * math.sqrt(3.0) / 2.0
    mask = np.ones_like(u, dtype=bool)
    for phi in (0.0, math.pi / 3.0, 2.0 * math.pi / 3.0):
        axis = ua * math.cos(phi) + v * math.sin(phi)
        mask &= np.abs(axis) <= half
    return mask


def _shape_diamond(u, v, s, k):
    a = 1.5 * _aspect(k)
    return np.abs(u) / a + np.abs(v) <= s


def _shape_h_bracket(u, v, s, k):
    t = 0.22 * _chunk(k)
    o = 0.7
    left = (np.abs(u + o * s) <= t * s) & (np.abs(v) <= s)
    right = (np.abs(u - o * s) <= t * s) & (np.abs(v) <= s)
    bar = (np.abs(v) <= t * s) & (np.abs(u) <= o * s)
    return left | right | bar


def _shape_crescent(u, v, s, k):
    d = 0.45 + 0.1 * k
    disk = u * u + v * v <= s * s
    bite = (u - d * s) ** 2 + v * v <= (0.75 * s) ** 2
    return disk & ~bite


def _shape_slotted_bar(u, v, s, k):
    a = 1.5 * _aspect(k)
    r = 0.2 + 0.06 * _chunk(k)
    body = (np.abs(u) <= a * s) & (np.abs(v) <= 0.55 * s)
    hole1 = (u - 0.5 * a * s) ** 2 + v * v <= (r * s) ** 2
    hole2 = (u + 0.5 * a * s) ** 2 + v * v <= (r * s) ** 2
    return body & ~hole1 & ~hole2


_FAMILIES = (
    ("ellipse", _shape_ellipse),
    ("rect", _shape_rect),
    ("triangle", _shape_triangle),
    ("cross", _shape_cross),
    ("ring", _shape_ring),
    ("u_channel", _shape_u_channel),
    ("l_bracket", _shape_l_bracket),
    ("tee", _shape_tee),
    ("spoked_disk", _shape_spoked_disk),
    ("hexagon", _shape_hexagon),
    ("diamond", _shape_diamond),
    ("h_bracket", _shape_h_bracket),
    ("crescent", _shape_crescent),
    ("slotted_bar", _shape_slotted_bar),
)


def class_label(class_id: int) -> str:
    return f"obj{class_id:02d}"


def _textured_background(canvas: int, rng: np.random.Generator) -> np.ndarray:
    # Coarse random grid blown up bilinearly, then light pixel noise: busy
    # enough to defeat a plain threshold, smooth enough to look like cloth.
    coarse = rng.integers(70, 216, size=(6, 6, 3), dtype=np.uint8)
    bg = resize(coarse, canvas, canvas).astype(np.float64)
    bg += rng.normal(0.0, 5.0, size=bg.shape)
    return np.clip(np.rint(bg), 0, 255).astype(np.uint8)


def render_scene(class_id: int, index: int, orientations: int, background: str,
                 canvas: int, seed: int) -> tuple[np.ndarray, BBox]:
    """Render one scene and return it with the tight foreground bbox."""
    if orientations < 1:
        raise ValueError("orientations must be >= 1")
    if canvas < 32:
        raise ValueError("canvas must be >= 32")
    if background not in ("white", "textured"):
        raise ValueError(f"unknown background {background!r}")
    rng = stream(seed, "synth", class_id, index)
    fam = class_id % len(_FAMILIES)
    variant = class_id // len(_FAMILIES)
    builder = _FAMILIES[fam][1]

    s = canvas * rng.uniform(0.18, 0.23)
    base_angle = (index % orientations) * (360.0 / orientations)
    angle = math.radians(base_angle + rng.uniform(-8.0, 8.0))
    cx = canvas / 2.0 + rng.uniform(-0.03, 0.03) * canvas
    cy = canvas / 2.0 + rng.uniform(-0.03, 0.03) * canvas
    fill = 60 + (150 * class_id) % 165 + int(rng.integers(-6, 7))

    yy, xx = np.mgrid[0:canvas, 0:canvas].astype(np.float64)
    du = xx - cx
    dv = yy - cy
    cos_a, sin_a = math.cos(angle), math.sin(angle)
    u = cos_a * du + sin_a * dv
    v = -sin_a * du + cos_a * dv
    mask = builder(u, v, s, variant)
    if not mask.any():
        raise RuntimeError(f"empty silhouette for class {class_id} index {index}")

    if background == "white":
        img = np.full((canvas, canvas, 3), 255, dtype=np.uint8)
    else:
        img = _textured_background(canvas, rng)
    img[mask] = np.uint8(np.clip(fill, 0, 235))

    ys, xs = np.nonzero(mask)
    tight = BBox(int(xs.min()), int(ys.min()),
                 int(xs.max() - xs.min() + 1), int(ys.max() - ys.min() + 1))
    return img, tight


def _render_task(args: tuple) -> dict:
    (out_dir, class_id, index, orientations, background, canvas, seed) = args
    img, tight = render_scene(class_id, index, orientations, background,
                              canvas, seed)
    name = class_label(class_id)
    rel = f"{name}/scene_{index:04d}.png"
    write_png(Path(out_dir) / rel, img)
    return {"image_path": rel, "class_id": class_id, "bbox": tight.to_dict()}


def generate_synthetic_corpus(num_classes: int, per_class: int, orientations: int,
                              background: str, seed: int, out_dir: Path,
                              canvas: int = 96, jobs: int = 1,
                              dataset_id: str = "corpus") -> Manifest:
    """Render the full scene corpus and write its manifest.

    Every class gets `per_class` scenes cycling through `orientations`
    evenly spaced base rotations with a small jitter. Output layout is
    out_dir/<class_name>/scene_NNNN.png plus out_dir/manifest.jsonl, and is
    byte-identical for a given seed regardless of `jobs`.
    """
    if num_classes < 2:
        raise ValueError("need at least two classes")
    if per_class < orientations:
        raise ValueError("per_class must be >= orientations")
    out_dir = Path(out_dir)
    tasks = [
        (str(out_dir), class_id, index, orientations, background, canvas, seed)
        for class_id in range(num_classes)
        for index in range(per_class)
    ]
    rows = map_ordered(_render_task, tasks, jobs=jobs)
    records = [
        SampleRecord(
            image_path=row["image_path"],
            class_id=row["class_id"],
            class_name=class_label(row["class_id"]),
            bbox=BBox.from_dict(row["bbox"]),
            provenance="ground_truth",
            aug_ops=[],
        )
        for row in rows
    ]
    manifest = Manifest(dataset_id=dataset_id, num_classes=num_classes,
                        records=records)
    manifest.save(out_dir / "manifest.jsonl")
    return manifest


# ---------------------------------------------------------------------------
# Ingest: scene -> cropped ground-truth sample
# ---------------------------------------------------------------------------


def _ingest_task(args: tuple) -> dict:
    (src_root, rel_path, class_name, bbox_dict, out_dir, bin_threshold,
     margin, use_manifest_bbox, order) = args
    img = read_png(Path(src_root) / rel_path)
    if use_manifest_bbox:
        tight = BBox.from_dict(bbox_dict)
        h, w = img.shape[:2]
        expanded = tight.expand(margin, w, h)
    else:
        tight, expanded = extract_foreground_bbox(img, bin_threshold, margin)
    patch = crop(img, expanded)
    stem = Path(rel_path).stem
    rel_out = f"{class_name}/{stem}.png"
    write_png(Path(out_dir) / rel_out, patch)
    # Annotation is relative to the crop, so shift the tight box into it.
    local = BBox(tight.x0 - expanded.x0, tight.y0 - expanded.y0,
                 tight.w, tight.h)
    write_annotation(Path(out_dir) / f"{class_name}/{stem}.txt", class_name,
                     local, expanded.w, expanded.h, order=order)
    return {"image_path": rel_out, "bbox": expanded.to_dict()}


def ingest_corpus(manifest: Manifest, out_dir: Path, bin_threshold: int = 240,
                  margin: int = 5, bbox_source: str = "detect",
                  annotation_order: str = "height_first", jobs: int = 1,
                  dataset_id: str = "ground_truth") -> Manifest:
    """Crop every scene to its object and write per-crop annotations.

    `bbox_source` "detect" thresholds the scene to find the object, which
    assumes a light background; "manifest" trusts the tight boxes already in
    the manifest (the generator's ground truth), which textured backgrounds
    require. The output manifest stores each crop's position in its source
    scene.
    """
    if manifest.root is None:
        raise ValueError("manifest must be loaded from or saved to disk first")
    if bbox_source not in ("detect", "manifest"):
        raise ValueError(f"unknown bbox_source {bbox_source!r}")
    out_dir = Path(out_dir)
    use_manifest = bbox_source == "manifest"
    tasks = [
        (str(manifest.root), rec.image_path, rec.class_name,
         rec.bbox.to_dict(), str(out_dir), bin_threshold, margin,
         use_manifest, annotation_order)
        for rec in manifest.records
    ]
    rows = map_ordered(_ingest_task, tasks, jobs=jobs)
    records = [
        SampleRecord(
            image_path=row["image_path"],
            class_id=rec.class_id,
            class_name=rec.class_name,
            bbox=BBox.from_dict(row["bbox"]),
            provenance="ground_truth",
            aug_ops=[],
        )
        for rec, row in zip(manifest.records, rows)
    ]
    out = Manifest(dataset_id=dataset_id, num_classes=manifest.num_classes,
                   records=records)
    out.save(out_dir / "manifest.jsonl")
    return out
