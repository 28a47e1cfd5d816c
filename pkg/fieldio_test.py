#!/usr/bin/env python3
"""Tests for the POUF container, checkpoints, datasets and config loading."""

import struct

import numpy as np
import pytest

from poumor import fieldio
from poumor.config import Config, DataConfig, load_config
from poumor.datagen import gen_burgers_closure, gen_disk_pairs
from poumor.errors import ConfigError, FieldFormatError

def test_tensor_roundtrip(tmp_path):
    """Shape, dtype and values survive a write and read."""
    arr = np.random.default_rng(0).normal(size=(3, 4, 2))
    fieldio.write_tensor(tmp_path / "a.pouf", arr)
    back = fieldio.read_tensor(tmp_path / "a.pouf")
    assert back.dtype == np.float64 and np.array_equal(back, arr)

def test_header_layout():
    """Magic, version, dtype tag, rank and dims precede the payload."""
    data = fieldio.tensor_bytes(np.array([1.0, 2.0]))
    assert data[:4] == b"POUF"
    assert struct.unpack("<HBBQ", data[4:16]) == (1, 1, 1, 2)
    assert len(data) == 16 + 16

def test_dtypes():
    """Complex, integer and boolean arrays are stored; booleans come back as uint8."""
    c = np.array([1 + 2j, -3j])
    assert np.array_equal(fieldio.tensor_from_bytes(fieldio.tensor_bytes(c)), c)
    i = np.arange(6, dtype=np.int64).reshape(2, 3)
    assert np.array_equal(fieldio.tensor_from_bytes(fieldio.tensor_bytes(i)), i)
    b = fieldio.tensor_from_bytes(fieldio.tensor_bytes(np.array([True, False])))
    assert b.dtype == np.uint8 and b.tolist() == [1, 0]
    with pytest.raises(FieldFormatError, match="unsupported dtype"):
        fieldio.tensor_bytes(np.zeros(2, dtype=np.float32))

def test_rejects_corrupt_files():
    """Bad magic, bad version, truncation and trailing bytes are format errors."""
    good = fieldio.tensor_bytes(np.ones(4))
    with pytest.raises(FieldFormatError, match="bad magic"):
        fieldio.tensor_from_bytes(b"NOPE" + good[4:])
    with pytest.raises(FieldFormatError, match="version"):
        fieldio.tensor_from_bytes(good[:4] + struct.pack("<H", 9) + good[6:])
    with pytest.raises(FieldFormatError, match="truncated"):
        fieldio.tensor_from_bytes(good[:-1])
    with pytest.raises(FieldFormatError, match="trailing"):
        fieldio.tensor_from_bytes(good + b"\0")
    with pytest.raises(FieldFormatError, match="dtype tag"):
        fieldio.tensor_from_bytes(good[:6] + b"\x07" + good[7:])

def test_table_roundtrip():
    """Named tables keep names, order and values."""
    table = {"mu/w": np.ones((2, 2)), "rho/w": np.full((2, 2), -7.0), "idx": np.arange(3)}
    back = fieldio.table_from_bytes(fieldio.table_bytes(table))
    assert list(back) == list(table)
    assert all(np.array_equal(back[k], table[k]) for k in table)
    with pytest.raises(FieldFormatError, match="tensor table"):
        fieldio.tensor_from_bytes(fieldio.table_bytes(table))
    with pytest.raises(FieldFormatError, match="single tensor"):
        fieldio.table_from_bytes(fieldio.tensor_bytes(np.ones(2)))

def test_checkpoint_meta(tmp_path):
    """Checkpoints store a JSON meta blob next to the tensors."""
    path = tmp_path / "c.pouf"
    fieldio.save_checkpoint(path, {"param/w": np.ones(3)}, {"objective": "least-squares", "step": 7})
    table, meta = fieldio.load_checkpoint(path)
    assert meta == {"objective": "least-squares", "step": 7}
    assert list(table) == ["param/w"]
    fieldio.write_table(tmp_path / "bare.pouf", {"w": np.ones(1)})
    with pytest.raises(FieldFormatError, match="no meta"):
        fieldio.load_checkpoint(tmp_path / "bare.pouf")

def test_pair_dataset_roundtrip(tmp_path):
    """Saved pairs load back with grid, masks and seeds."""
    pairs = gen_disk_pairs(DataConfig(n=8, count=2, seed=5))
    entry = fieldio.save_pairs(tmp_path, "train", pairs)
    fieldio.write_manifest(tmp_path, {"kind": "disk", "grid": pairs.grid.to_dict(), "splits": {"train": entry}})
    back = fieldio.load_pairs(tmp_path, "train")
    assert back.grid == pairs.grid and back.seeds == [5, 6]
    assert np.array_equal(back.inputs, pairs.inputs)
    assert back.masks.dtype == bool and np.array_equal(back.masks, pairs.masks)
    with pytest.raises(FieldFormatError, match="no split"):
        fieldio.load_pairs(tmp_path, "val")

def test_closure_dataset_roundtrip(tmp_path):
    """Closure series load back with their grids and constants."""
    closure = gen_burgers_closure(DataConfig(kind="burgers", n_fine=32, stride=4, snapshots=3, nu=0.01))
    manifest = {"kind": "burgers", **fieldio.save_closure(tmp_path, closure)}
    fieldio.write_manifest(tmp_path, manifest)
    back = fieldio.load_closure(tmp_path)
    assert back.coarse_grid == closure.coarse_grid
    assert np.array_equal(back.coarse, closure.coarse)
    assert back.stride == 4 and back.nu == 0.01

def test_bad_manifest(tmp_path):
    """An unparsable manifest is a format error."""
    (tmp_path / "manifest.json").write_text("{not json")
    with pytest.raises(FieldFormatError, match="invalid manifest"):
        fieldio.read_manifest(tmp_path)

def test_config_defaults_and_overrides(tmp_path):
    """Files and --set overrides layer over the defaults."""
    path = tmp_path / "c.yaml"
    path.write_text("data:\n  kind: burgers\n  n_fine: 64\ntrain:\n  lr: 0.01\n")
    cfg = load_config(path, ["train.epochs=3", "model.keep=4"])
    assert cfg.data.kind == "burgers" and cfg.data.filter_width == cfg.data.stride
    assert cfg.train.lr == 0.01 and cfg.train.epochs == 3
    assert cfg.model.keep == 4 and cfg.rollout.steps == 40
    assert Config.from_dict(cfg.to_dict()) == cfg

def test_config_rejects_unknown_and_bad_values(tmp_path):
    """Unknown keys, unknown sections and bad values are config errors."""
    with pytest.raises(ConfigError, match="unknown key"):
        Config.from_dict({"train": {"learning_rate": 1.0}})
    with pytest.raises(ConfigError, match="unknown section"):
        Config.from_dict({"optimizer": {}})
    with pytest.raises(ConfigError, match="must be one of"):
        load_config(None, ["model.head=bayesian"])
    with pytest.raises(ConfigError, match="positive"):
        load_config(None, ["train.lr=-1"])
    with pytest.raises(ConfigError, match="section.key=value"):
        load_config(None, ["lr=1"])
    with pytest.raises(ConfigError, match="domain gates"):
        load_config(None, ["model.gating=domain"])

if __name__ == "__main__":
    pytest.main([__file__, "-v"])
