"""Config merge, validation, and override behavior."""

import json
from pathlib import Path

import pytest

from edgeforge.config import (DEFAULTS, ConfigError, deep_merge, load_config)


def write_cfg(tmp_path: Path, data: dict) -> Path:
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(data))
    return path


def test_defaults_load_without_file():
    cfg = load_config()
    assert cfg.feature_side == 200
    assert cfg.split.batch_size == 5000
    assert cfg.split.holdout_fraction == 0.2
    assert cfg.corpus.num_classes == 10
    assert len(cfg.models.kinds) == 4
    assert cfg.augment.target is None
    assert cfg.edges.import_root is None


def test_deep_merge_keeps_sibling_keys():
    merged = deep_merge(DEFAULTS, {"corpus": {"num_classes": 4}})
    assert merged["corpus"]["num_classes"] == 4
    assert merged["corpus"]["per_class"] == DEFAULTS["corpus"]["per_class"]
    assert DEFAULTS["corpus"]["num_classes"] == 10  # input untouched


def test_unknown_key_names_its_path():
    with pytest.raises(ConfigError, match="corpus.numclasses"):
        deep_merge(DEFAULTS, {"corpus": {"numclasses": 4}})
    with pytest.raises(ConfigError, match="mystery"):
        deep_merge(DEFAULTS, {"mystery": 1})


def test_section_must_stay_an_object():
    with pytest.raises(ConfigError, match="corpus"):
        deep_merge(DEFAULTS, {"corpus": 5})


def test_file_values_then_overrides(tmp_path):
    path = write_cfg(tmp_path, {"seed": 7, "feature_side": 32})
    cfg = load_config(path, {"seed": 9, "workdir": str(tmp_path / "w")})
    assert cfg.seed == 9
    assert cfg.feature_side == 32
    assert cfg.workdir == tmp_path / "w"
    # the split plan inherits the final seed
    assert cfg.split.seed == 9


def test_missing_file_is_config_error(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        load_config(tmp_path / "absent.json")


def test_bad_json_and_non_object(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text("{nope")
    with pytest.raises(ConfigError, match="valid JSON"):
        load_config(path)
    path.write_text("[1, 2]")
    with pytest.raises(ConfigError, match="JSON object"):
        load_config(path)


@pytest.mark.parametrize("patch", [
    {"corpus": {"num_classes": 1}},
    {"corpus": {"background": "plaid"}},
    {"corpus": {"per_class": 2, "orientations": 4}},
    {"alt_corpus": {"enabled": "yes"}},
    {"ingest": {"bin_threshold": 0}},
    {"ingest": {"annotation_order": "upside_down"}},
    {"ingest": {"bbox_source": "psychic"}},
    {"augment": {"target": 0}},
    {"augment": {"op_mix": []}},
    {"augment": {"op_mix": ["teleport"]}},
    {"edges": {"canny": {"low": 0.5, "high": 0.2}}},
    {"edges": {"overlay_color": [0, 0]}},
    {"edges": {"overlay_color": [0, 0, 300]}},
    {"split": {"holdout_fraction": 1.5}},
    {"split": {"batch_size": 1}},
    {"models": {"kinds": []}},
    {"models": {"kinds": ["quantum"]}},
    {"models": {"kinds": ["perceptron", "perceptron"]}},
    {"models": {"eta0": 0.0}},
    {"seed": -1},
    {"jobs": 0},
    {"feature_side": 0},
])
def test_invalid_values_raise_config_error(tmp_path, patch):
    with pytest.raises(ConfigError):
        load_config(write_cfg(tmp_path, patch))


def test_edge_param_objects_materialize(tmp_path):
    path = write_cfg(tmp_path, {
        "edges": {"canny": {"sigma": 2.0},
                  "prewitt": {"threshold": 0.3},
                  "import_root": "maps"},
    })
    cfg = load_config(path)
    assert cfg.edges.params.canny.sigma == 2.0
    assert cfg.edges.params.canny.low == 0.1  # default survives
    assert cfg.edges.params.prewitt.threshold == 0.3
    assert cfg.edges.import_root == Path("maps")


def test_unknown_edge_param_rejected(tmp_path):
    path = write_cfg(tmp_path, {"edges": {"canny": {"sharpness": 3}}})
    with pytest.raises(ConfigError):
        load_config(path)


def test_to_dict_reflects_resolved_values(tmp_path):
    path = write_cfg(tmp_path, {"seed": 5, "augment": {"target": 50}})
    cfg = load_config(path, {"jobs": 3})
    d = cfg.to_dict()
    assert d["seed"] == 5
    assert d["jobs"] == 3
    assert d["augment"]["target"] == 50
    assert d["corpus"]["canvas"] == 96
    json.dumps(d)  # snapshot must be serializable
