"""Shared fixtures: the one-shot desk-scale pipeline run and the
acceptance summary printed at the end of the session."""

import time
from pathlib import Path
from types import SimpleNamespace

import pytest

REPO_ROOT = Path(__file__).resolve().parent.parent
DESK_CONFIG = REPO_ROOT / "configs" / "desk.json"

CRITERIA = {
    1: "desk-scale run-all finishes under 30 minutes with 15 variants",
    2: "all four models reach >= 0.90 holdout accuracy on base_rgb",
    3: "exactly 15 variant manifests: 7 masks, 7 overlays, 1 base",
    4: "learner updates match the scalar oracle over 100 random steps",
    5: "streaming scaler matches two-pass stats to 1e-9 over 1e5 values",
    6: "edge-mask invariants hold on 50 random synthetic images",
    7: "mask union algebra verified on 1000 random triples",
    8: "balanced class counts within 1% of target for every class",
    9: "holdout never reaches scaler or model updates; splits within 1",
    10: "two run-alls are byte-identical at any jobs setting",
    11: "report carries the rgb_all_edges vs base_rgb trend section",
}

_results: dict = {}


def record_criterion(num: int, ok: bool, detail: str = "") -> None:
    _results[num] = (bool(ok), detail)


@pytest.fixture
def criterion():
    """Record a criterion outcome for the session summary, then assert it."""
    def _check(num: int, ok: bool, detail: str = "") -> None:
        record_criterion(num, ok, detail)
        assert ok, f"criterion {num} failed: {detail or CRITERIA[num]}"
    return _check


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _results:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(CRITERIA):
        entry = _results.get(num)
        if entry is None:
            status, detail = "NOT RUN", ""
        else:
            status = "PASS" if entry[0] else "FAIL"
            detail = entry[1]
        line = f"criterion {num:2d} [{status}] {CRITERIA[num]}"
        if detail:
            line += f" -- {detail}"
        terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def desk_run(tmp_path_factory):
    """Execute the full desk-scale pipeline once for the whole session."""
    from edgeforge.cli import main
    from edgeforge.config import load_config

    out = tmp_path_factory.mktemp("desk") / "run"
    start = time.monotonic()
    code = main(["run-all", "--config", str(DESK_CONFIG), "--out", str(out)])
    duration = time.monotonic() - start
    if code != 0:
        raise RuntimeError(f"desk-scale run-all exited with {code}")
    cfg = load_config(DESK_CONFIG, {"workdir": str(out)})
    return SimpleNamespace(out=out, duration=duration, cfg=cfg)
