"""
Tests for checkpoint files, config files and the run ledger.
"""
import struct
from collections import OrderedDict
from pathlib import Path

import numpy as np
import pytest
from numpy.testing import assert_array_equal

from app import settings
from app.db.session import record_run, recent_runs
from app.errors import CheckpointError, ConfigError
from app.services.backbone import DFormerV2, ModelConfig
from app.services.checkpoint import (
    MAGIC,
    config_path_for,
    load_checkpoint,
    load_model,
    save_checkpoint,
    save_model,
)
from app.services.data_pipeline import synth_scene
from app.services.trainer import TrainConfig
from app.services.validators import (
    format_config,
    parse_config_text,
    read_config_file,
    safe_get,
    split_config,
)

CONFIG_DIR = Path(__file__).resolve().parent / "configs"


# Checkpoints -----------------------------------------------------------------

def test_state_round_trip(tmp_path):
    state = OrderedDict([
        ("w", np.arange(6, dtype=np.float32).reshape(2, 3)),
        ("scalar", np.array(1.5, dtype=np.float32)),
        ("nested.bias", np.array([-0.25, 4.0], dtype=np.float32)),
    ])
    path = save_checkpoint(tmp_path / "m.dfv2", state)
    assert path.read_bytes()[:4] == MAGIC
    back = load_checkpoint(path)
    assert list(back) == list(state)
    for name, value in state.items():
        assert back[name].dtype == np.float32
        assert_array_equal(back[name], value)


def test_bad_magic_version_and_truncation(tmp_path):
    path = save_checkpoint(tmp_path / "m.dfv2", {"w": np.ones((3, 3), dtype=np.float32)})
    data = path.read_bytes()

    (tmp_path / "magic.dfv2").write_bytes(b"XXXX" + data[4:])
    with pytest.raises(CheckpointError, match="not a DFV2"):
        load_checkpoint(tmp_path / "magic.dfv2")

    (tmp_path / "version.dfv2").write_bytes(data[:4] + struct.pack("<I", 9) + data[8:])
    with pytest.raises(CheckpointError, match="version 9"):
        load_checkpoint(tmp_path / "version.dfv2")

    (tmp_path / "short.dfv2").write_bytes(data[:-4])
    with pytest.raises(CheckpointError, match="truncated"):
        load_checkpoint(tmp_path / "short.dfv2")

    (tmp_path / "long.dfv2").write_bytes(data + b"\x00")
    with pytest.raises(CheckpointError, match="trailing"):
        load_checkpoint(tmp_path / "long.dfv2")

    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "missing.dfv2")


def test_model_round_trip_predicts_identically(tmp_path):
    model = DFormerV2(ModelConfig.tiny(numeric_mode="narrow", fusion_mode="conv"))
    path = save_model(tmp_path / "model.dfv2", model)
    assert config_path_for(path).name == "model.dfv2.cfg"
    reloaded = load_model(path)
    assert reloaded.config == model.config
    scene = synth_scene(1, 32, 32, 4)
    assert_array_equal(reloaded(scene.rgb, scene.depth).data, model(scene.rgb, scene.depth).data)


def test_load_model_needs_a_matching_config(tmp_path):
    path = save_model(tmp_path / "model.dfv2", DFormerV2(ModelConfig.tiny()))
    config_path_for(path).write_text(format_config(ModelConfig.tiny(num_classes=6).to_mapping()))
    with pytest.raises(CheckpointError):
        load_model(path)
    config_path_for(path).write_text("stage_dims = 8, 16\n")
    with pytest.raises(CheckpointError):
        load_model(path)
    config_path_for(path).unlink()
    with pytest.raises(CheckpointError, match="missing model config"):
        load_model(path)


# Config files ----------------------------------------------------------------

def test_parse_config_text():
    values = parse_config_text(
        "# comment\n"
        "stage_dims = 8, 16, 24, 32\n"
        "\n"
        "decompose = false  # trailing\n"
        "lr = 6e-5\n"
        "decay = linear(0.75,1.0)\n"
    )
    assert values == {"stage_dims": [8, 16, 24, 32], "decompose": False, "lr": 6e-5, "decay": "linear(0.75,1.0)"}
    model, train = split_config(values)
    assert set(model) == {"stage_dims", "decompose", "decay"}
    assert train == {"lr": 6e-5}


@pytest.mark.parametrize("text", [
    "stage_dims 8, 16\n",
    "colour = red\n",
    "steps = 2\nsteps = 3\n",
    "steps = two\n",
    "augment = maybe\n",
    "stage_dims = 8, x\n",
])
def test_config_errors(text):
    with pytest.raises(ConfigError):
        parse_config_text(text)


def test_format_config_round_trip():
    values = {**ModelConfig.tiny(decompose=False).to_mapping(), **TrainConfig(lr=3e-4).to_mapping()}
    back = parse_config_text(format_config(values))
    model, train = split_config(back)
    assert ModelConfig.from_mapping(model) == ModelConfig.tiny(decompose=False)
    assert TrainConfig.from_mapping(train) == TrainConfig(lr=3e-4)
    with pytest.raises(ConfigError):
        format_config({"colour": "red"})


def test_shipped_configs_parse():
    for name in ("nano", "tiny"):
        model, train = split_config(read_config_file(CONFIG_DIR / f"{name}.cfg"))
        ModelConfig.from_mapping(model)
        TrainConfig.from_mapping(train)
    with pytest.raises(ConfigError):
        read_config_file(CONFIG_DIR / "missing.cfg")


def test_safe_get():
    assert safe_get({"steps": 3}, "steps", 300) == 3
    assert safe_get({}, "steps", 300) == 300


# Run ledger ------------------------------------------------------------------

def test_record_and_list_runs(tmp_path, monkeypatch):
    monkeypatch.setattr(settings, "RUNS_DB", str(tmp_path / "runs.db"))
    first = record_run("check", "wide", "v0.1.0", headline="3/3 passed")
    second = record_run("train-toy", "narrow", "v0.1.0", arm="both", seed=2, wall_seconds=1.5)
    assert first is not None and second is not None
    runs = recent_runs(limit=5)
    assert [r.command for r in runs] == ["train-toy", "check"]
    assert runs[0].arm == "both" and runs[0].seed == 2
    assert len(recent_runs(limit=1)) == 1


def test_ledger_can_be_disabled(monkeypatch):
    monkeypatch.setattr(settings, "RUNS_DB", "")
    assert record_run("check", "wide", "v0") is None
    assert recent_runs() == []


def test_ledger_failures_are_swallowed(tmp_path, monkeypatch):
    monkeypatch.setattr(settings, "RUNS_DB", str(tmp_path / "no" / "such" / "dir" / "runs.db"))
    assert record_run("check", "wide", "v0") is None
