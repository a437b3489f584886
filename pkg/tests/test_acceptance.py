"""Session acceptance checks; each test records one criterion line."""

import json
from collections import deque

import numpy as np
import pytest

from oracle_learn import ScalarModelOracle, two_pass_stats

from edgeforge.datasets import VARIANT_IDS, enumerate_variants, load_experiment
from edgeforge.edges import (CannyParams, SOBEL_GX, SOBEL_GY, canny, combine,
                             gradient)
from edgeforge.evaluate import (batch_bounds, split_holdout,
                                train_count, train_models_on_stream)
from edgeforge.imaging import gaussian_blur_float, to_grayscale
from edgeforge.ingest import Manifest, render_scene
from edgeforge.learn import MODEL_KINDS, LearnerParams, LinearModel, StreamingScaler
from edgeforge.rng import stream as rng_stream

pytestmark = pytest.mark.acceptance


def _grid_report(desk_run) -> dict:
    path = desk_run.out / "reports" / "grid_report.json"
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def test_criterion_01_desk_pipeline_completes(desk_run, criterion):
    out = desk_run.out
    ok = (out / "reports" / "grid_report.json").is_file()
    ok = ok and (out / "reports" / "grid_report.csv").is_file()
    variant_dirs = [out / "variants" / vid / "manifest.jsonl"
                    for vid in VARIANT_IDS]
    ok = ok and all(p.is_file() for p in variant_dirs)
    balanced = Manifest.load(out / "balanced" / "manifest.jsonl")
    counts = balanced.class_counts()
    ok = ok and len(counts) == 10 and all(v >= 1000 for v in counts.values())
    report = _grid_report(desk_run)
    ok = ok and report["protocol"]["feature_side"] == 64
    ok = ok and len(report["cells"]) == 15 * 4
    ok = ok and desk_run.duration < 1800.0
    criterion(1, ok, f"{desk_run.duration:.0f}s, "
                     f"{min(counts.values())} per class minimum")


def test_criterion_02_learning_sanity(desk_run, criterion):
    report = _grid_report(desk_run)
    accs = {c["model"]: c["accuracy"] for c in report["cells"]
            if c["dataset_id"] == "base_rgb"}
    ok = set(accs) == set(MODEL_KINDS) and all(a >= 0.90
                                               for a in accs.values())
    detail = ", ".join(f"{k}={accs.get(k, float('nan')):.3f}"
                       for k in MODEL_KINDS)
    criterion(2, ok, detail)


def test_criterion_03_variant_structure(desk_run, criterion):
    exp = load_experiment(desk_run.out / "variants")
    balanced = Manifest.load(desk_run.out / "balanced" / "manifest.jsonl")
    specs = {s.id: s for s in enumerate_variants()}
    ok = sorted(exp) == sorted(VARIANT_IDS) and len(exp) == 15
    base = [vid for vid in exp if not specs[vid].detectors]
    masks = [vid for vid in exp
             if specs[vid].detectors and not specs[vid].overlay]
    overlays = [vid for vid in exp if specs[vid].overlay]
    ok = ok and len(base) == 1 and len(masks) == 7 and len(overlays) == 7
    ok = ok and all(len(man) == len(balanced) for man in exp.values())
    for man in exp.values():
        man.validate()
    criterion(3, ok, f"{len(masks)} masks, {len(overlays)} overlays, "
                     f"{len(base)} base, {len(balanced)} records each")


def test_criterion_04_learner_oracle(criterion):
    worst = 0.0
    checked = 0
    for kind in MODEL_KINDS:
        rng = rng_stream(911, "accept-oracle", kind)
        num_classes, dim = 3, int(rng.integers(2, 11))
        params = LearnerParams(eta0=0.01, alpha=1e-4, c_agg=1.0)
        model = LinearModel(kind, num_classes, dim, params)
        oracle = ScalarModelOracle(kind, num_classes, dim)
        for _ in range(100):
            x = rng.normal(0.0, 1.0, size=dim)
            y = int(rng.integers(0, num_classes))
            before_w = model.weights.copy()
            before_b = model.bias.copy()
            ow_before = [row[:] for row in oracle.w]
            ob_before = oracle.b[:]
            model.partial_fit(x, np.array([y]))
            oracle.fit_one([float(v) for v in x], y)
            passive = oracle.w == ow_before and oracle.b == ob_before
            if passive:
                assert np.array_equal(model.weights, before_w)
                assert np.array_equal(model.bias, before_b)
            diff_w = np.max(np.abs(model.weights - np.array(oracle.w)))
            diff_b = np.max(np.abs(model.bias - np.array(oracle.b)))
            step_diff = max(float(diff_w), float(diff_b))
            if kind == "perceptron":
                assert step_diff == 0.0
            worst = max(worst, step_diff)
            checked += 1
    ok = checked == 400 and worst <= 1e-12
    criterion(4, ok, f"400 steps, worst deviation {worst:.2e}")


def test_criterion_05_scaler_oracle(criterion):
    rng = rng_stream(912, "accept-scaler")
    values = rng.normal(3.0, 50.0, size=(100_000, 3)) * \
        np.array([1.0, 1e-3, 1e4])
    scaler = StreamingScaler(3)
    i = 0
    while i < len(values):
        step = int(rng.integers(1, 7000))
        scaler.update(values[i:i + step])
        i += step
    mean, var = two_pass_stats(values)
    rel_mean = np.max(np.abs(scaler.mean - mean) / np.maximum(np.abs(mean), 1.0))
    rel_var = np.max(np.abs(scaler.variance() - var) / np.abs(var))
    ok = scaler.count == 100_000 and rel_mean <= 1e-9 and rel_var <= 1e-9
    criterion(5, ok, f"mean rel {rel_mean:.2e}, var rel {rel_var:.2e}")


_BIN_OFFSETS = ((0, 1), (1, 1), (1, 0), (1, -1))


def _direction_bin(gx: float, gy: float) -> int:
    ang = np.degrees(np.arctan2(gy, gx)) % 180.0
    if ang < 22.5 or ang >= 157.5:
        return 0
    if ang < 67.5:
        return 1
    if ang < 112.5:
        return 2
    return 3


def _mask_components(mask: np.ndarray):
    h, w = mask.shape
    seen = np.zeros_like(mask, dtype=bool)
    for sy in range(h):
        for sx in range(w):
            if not mask[sy, sx] or seen[sy, sx]:
                continue
            comp = []
            queue = deque([(sy, sx)])
            seen[sy, sx] = True
            while queue:
                y, x = queue.popleft()
                comp.append((y, x))
                for dy in (-1, 0, 1):
                    for dx in (-1, 0, 1):
                        ny, nx = y + dy, x + dx
                        if 0 <= ny < h and 0 <= nx < w and \
                                mask[ny, nx] and not seen[ny, nx]:
                            seen[ny, nx] = True
                            queue.append((ny, nx))
            yield comp


def test_criterion_06_edge_invariants(criterion):
    params = CannyParams()
    rng = rng_stream(913, "accept-canny")
    non_empty = 0
    for i in range(50):
        class_id = int(rng.integers(0, 28))
        index = int(rng.integers(0, 64))
        img, _ = render_scene(class_id, index, 8, "white", 96,
                              seed=int(rng.integers(0, 2**31)))
        gray = to_grayscale(img)
        mask = canny(gray, params)
        blurred = gaussian_blur_float(gray.astype(np.float64), params.sigma)
        gx, gy, mag = gradient(blurred, SOBEL_GX, SOBEL_GY)
        h, w = mag.shape

        def at(y, x):
            if 0 <= y < h and 0 <= x < w:
                return mag[y, x]
            return 0.0

        ys, xs = np.nonzero(mask)
        for y, x in zip(ys.tolist(), xs.tolist()):
            dy, dx = _BIN_OFFSETS[_direction_bin(gx[y, x], gy[y, x])]
            assert mag[y, x] + 1e-9 >= at(y + dy, x + dx)
            assert mag[y, x] + 1e-9 >= at(y - dy, x - dx)
        strong_cut = params.high * float(mag.max())
        for comp in _mask_components(mask):
            assert any(mag[y, x] + 1e-9 >= strong_cut for y, x in comp)
        if mask.any():
            non_empty += 1
    for level in (0, 127, 255):
        flat = np.full((40, 40), level, dtype=np.uint8)
        assert not canny(flat, params).any()
    ok = non_empty >= 45
    criterion(6, ok, f"{non_empty}/50 images produced edges; "
                     "maxima and connectivity held on all")


def test_criterion_07_union_algebra(criterion):
    rng = rng_stream(914, "accept-union")
    for _ in range(1000):
        p = float(rng.uniform(0.05, 0.95))
        a, b, c = (rng.random((16, 16)) < p for _ in range(3))
        assert np.array_equal(combine([a, b]), a | b)
        assert np.array_equal(combine([a, b]), combine([b, a]))
        assert np.array_equal(combine([combine([a, b]), c]),
                              combine([a, combine([b, c])]))
        assert np.array_equal(combine([a, b, c]), a | b | c)
        assert np.array_equal(combine([a, a]), a)
    criterion(7, True, "1000 triples, brute-force comparison")


def test_criterion_08_balance_within_tolerance(desk_run, criterion):
    balanced = Manifest.load(desk_run.out / "balanced" / "manifest.jsonl")
    target = desk_run.cfg.augment.target
    counts = balanced.class_counts()
    off = {c: abs(n - target) for c, n in counts.items()}
    ok = len(counts) == 10 and all(d <= 0.01 * target for d in off.values())
    criterion(8, ok, f"target {target}, worst offset {max(off.values())}")


def test_criterion_09_split_hygiene(desk_run, criterion):
    cfg = desk_run.cfg
    exp = load_experiment(desk_run.out / "variants")
    manifest = exp["base_rgb"]
    stream_man, hold_man = split_holdout(manifest, cfg.split)

    by_class_total = manifest.class_counts()
    by_class_hold = hold_man.class_counts()
    prop_ok = all(
        abs(by_class_hold[c] - cfg.split.holdout_fraction * n) <= 1.0
        for c, n in by_class_total.items())
    batch_ok = True
    for lo, hi in batch_bounds(len(stream_man), cfg.split.batch_size):
        k = hi - lo
        t = train_count(k, cfg.split.train_fraction)
        batch_ok = batch_ok and abs(t - 0.75 * k) <= 1.0
        batch_ok = batch_ok and abs((k - t) - 0.25 * k) <= 1.0

    _, _, _, audit = train_models_on_stream(
        stream_man, cfg.split, ["perceptron"], cfg.feature_side,
        cfg.models.params)
    hold_ids = {r.image_path for r in hold_man.records}
    stream_ids = {r.image_path for r in stream_man.records}
    audit_ok = (audit["fit"] & hold_ids == set()
                and audit["val"] & hold_ids == set()
                and audit["fit"] | audit["val"] == stream_ids
                and audit["fit"] & audit["val"] == set())
    ok = prop_ok and batch_ok and audit_ok
    criterion(9, ok, f"{len(audit['fit'])} fit ids, "
                     f"{len(hold_ids)} holdout ids, zero overlap")


def _tree_digest(root):
    files = {}
    for path in sorted(root.rglob("*")):
        if path.is_file() and path.suffix != ".npz":
            files[str(path.relative_to(root))] = path.read_bytes()
    return files


def test_criterion_10_determinism_across_jobs(tmp_path, criterion):
    from edgeforge.cli import main

    cfg_path = tmp_path / "micro.json"
    cfg_path.write_text(json.dumps({
        "feature_side": 24,
        "corpus": {"num_classes": 3, "per_class": 8, "orientations": 4,
                   "canvas": 64},
        "alt_corpus": {"enabled": True, "per_class": 4, "orientations": 4,
                       "canvas": 64},
        "augment": {"target": 14},
        "split": {"batch_size": 16},
    }))
    digests = []
    for name, jobs in (("r1", "1"), ("r2", "1"), ("r3", "2")):
        out = tmp_path / name
        code = main(["run-all", "--config", str(cfg_path),
                     "--out", str(out), "--jobs", jobs])
        assert code == 0
        digests.append(_tree_digest(out))
    same_paths = set(digests[0]) == set(digests[1]) == set(digests[2])
    same_bytes = digests[0] == digests[1] == digests[2]
    n_png = sum(1 for p in digests[0] if p.endswith(".png"))
    ok = same_paths and same_bytes and n_png > 0
    criterion(10, ok, f"{len(digests[0])} files compared "
                      f"({n_png} images), jobs 1 and 2")


def test_criterion_11_trend_section(desk_run, criterion):
    report = _grid_report(desk_run)
    trend = report["trend"]
    ok = trend.get("available") is True
    ok = ok and trend.get("variant") == "rgb_all_edges"
    ok = ok and trend.get("baseline") == "base_rgb"
    ok = ok and "rgb_all_edges" in trend.get("statement", "")
    ok = ok and "base_rgb" in trend.get("statement", "")
    ok = ok and len(trend.get("per_model", {}).get("rgb_all_edges", {})) == 4
    ranking_ids = [row["dataset_id"]
                   for row in report["ranking"]["by_accuracy"]]
    ok = ok and sorted(ranking_ids) == sorted(VARIANT_IDS)
    criterion(11, ok, trend.get("statement", "missing"))
