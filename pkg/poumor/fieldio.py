"""POUF binary container for fields, named tensor tables and datasets.

Tensor file:  b"POUF" | u16 version | record
Table file:   b"POUF" | u16 version | u8 0xFF | u32 count | count x (u16 len | utf8 name | record)
record:       u8 dtype tag | u8 rank | rank x u64 dim | little-endian row-major payload

dtype tags: 1 float64, 2 complex128, 3 uint8, 4 int64. Booleans are written
as uint8.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Mapping

import numpy as np

from .datagen import ClosureSeries, PairSet
from .errors import FieldFormatError
from .spectral import GridSpec

MAGIC = b"POUF"
VERSION = 1
TABLE_TAG = 0xFF
DTYPES = {1: np.dtype("<f8"), 2: np.dtype("<c16"), 3: np.dtype("u1"), 4: np.dtype("<i8")}
TAGS = {np.dtype(np.float64): 1, np.dtype(np.complex128): 2, np.dtype(np.uint8): 3, np.dtype(np.int64): 4}


def _tag(arr: np.ndarray) -> tuple:
    if arr.dtype == np.bool_:
        arr = arr.astype(np.uint8)
    tag = TAGS.get(arr.dtype)
    if tag is None:
        raise FieldFormatError(f"unsupported dtype {arr.dtype}")
    return tag, arr


def _record_bytes(arr) -> bytes:
    tag, arr = _tag(np.asarray(arr))
    if arr.ndim > 255:
        raise FieldFormatError(f"rank {arr.ndim} exceeds 255")
    head = struct.pack("<BB", tag, arr.ndim) + struct.pack(f"<{arr.ndim}Q", *arr.shape)
    return head + np.ascontiguousarray(arr, dtype=DTYPES[tag]).tobytes()


class _Reader:
    def __init__(self, data: bytes, name: str):
        self.data = data
        self.pos = 0
        self.name = name

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise FieldFormatError(f"{self.name}: truncated (need {n} bytes at offset {self.pos}, have {len(self.data) - self.pos})")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def record(self, tag=None) -> np.ndarray:
        if tag is None:
            (tag,) = self.unpack("<B")
        if tag not in DTYPES:
            raise FieldFormatError(f"{self.name}: unknown dtype tag {tag}")
        (rank,) = self.unpack("<B")
        dims = self.unpack(f"<{rank}Q")
        dtype = DTYPES[tag]
        count = int(np.prod(dims, dtype=np.int64))
        payload = self.take(count * dtype.itemsize)
        return np.frombuffer(payload, dtype=dtype).reshape(dims).copy()

    def done(self):
        if self.pos != len(self.data):
            raise FieldFormatError(f"{self.name}: {len(self.data) - self.pos} trailing bytes")


def _open(data: bytes, name: str) -> _Reader:
    r = _Reader(data, name)
    if r.take(4) != MAGIC:
        raise FieldFormatError(f"{name}: bad magic, not a POUF file")
    (version,) = r.unpack("<H")
    if version != VERSION:
        raise FieldFormatError(f"{name}: unsupported version {version}")
    return r


def tensor_bytes(arr) -> bytes:
    return MAGIC + struct.pack("<H", VERSION) + _record_bytes(arr)


def tensor_from_bytes(data: bytes, name: str = "<bytes>") -> np.ndarray:
    r = _open(data, name)
    (tag,) = r.unpack("<B")
    if tag == TABLE_TAG:
        raise FieldFormatError(f"{name}: is a tensor table, not a single tensor")
    arr = r.record(tag)
    r.done()
    return arr


def table_bytes(table: Mapping[str, np.ndarray]) -> bytes:
    parts = [MAGIC, struct.pack("<HBI", VERSION, TABLE_TAG, len(table))]
    for name, arr in table.items():
        raw = name.encode("utf-8")
        parts.append(struct.pack("<H", len(raw)) + raw + _record_bytes(arr))
    return b"".join(parts)


def table_from_bytes(data: bytes, name: str = "<bytes>") -> dict:
    r = _open(data, name)
    (tag,) = r.unpack("<B")
    if tag != TABLE_TAG:
        raise FieldFormatError(f"{name}: is a single tensor, not a tensor table")
    (count,) = r.unpack("<I")
    out = {}
    for _ in range(count):
        (length,) = r.unpack("<H")
        try:
            key = r.take(length).decode("utf-8")
        except UnicodeDecodeError:
            raise FieldFormatError(f"{name}: entry name is not utf-8") from None
        out[key] = r.record()
    r.done()
    return out


def write_tensor(path, arr) -> None:
    Path(path).write_bytes(tensor_bytes(arr))


def read_tensor(path) -> np.ndarray:
    return tensor_from_bytes(Path(path).read_bytes(), str(path))


def write_table(path, table: Mapping[str, np.ndarray]) -> None:
    Path(path).write_bytes(table_bytes(table))


def read_table(path) -> dict:
    return table_from_bytes(Path(path).read_bytes(), str(path))


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(path, table: Mapping[str, np.ndarray], meta: dict) -> None:
    """Named tensors plus a JSON metadata blob stored as the uint8 tensor "meta"."""
    blob = np.frombuffer(json.dumps(meta, sort_keys=True).encode("utf-8"), dtype=np.uint8)
    write_table(path, {"meta": blob, **table})


def load_checkpoint(path) -> tuple:
    table = read_table(path)
    if "meta" not in table:
        raise FieldFormatError(f"{path}: checkpoint has no meta entry")
    meta = json.loads(table.pop("meta").tobytes().decode("utf-8"))
    return table, meta


# ---------------------------------------------------------------------------
# datasets


def write_manifest(directory, manifest: dict) -> None:
    with open(Path(directory) / "manifest.json", "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")


def read_manifest(directory) -> dict:
    path = Path(directory) / "manifest.json"
    try:
        with open(path) as f:
            return json.load(f)
    except json.JSONDecodeError as e:
        raise FieldFormatError(f"{path}: invalid manifest ({e})") from None


def save_pairs(directory, split: str, pairs) -> dict:
    """Write a PairSet as <split>_<i>_{u,v,mask}.pouf; returns the split's manifest entry."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for i in range(len(pairs)):
        stem = directory / f"{split}_{i:05d}"
        write_tensor(f"{stem}_u.pouf", pairs.inputs[i])
        write_tensor(f"{stem}_v.pouf", pairs.targets[i])
        write_tensor(f"{stem}_mask.pouf", pairs.masks[i])
    return {"count": len(pairs), "seeds": list(pairs.seeds), "angles": list(pairs.angles)}


def load_pairs(directory, split: str):
    manifest = read_manifest(directory)
    entry = manifest.get("splits", {}).get(split)
    if entry is None:
        raise FieldFormatError(f"{directory}: manifest has no split {split!r}")
    grid = GridSpec.from_dict(manifest["grid"])
    directory = Path(directory)
    inputs, targets, masks = [], [], []
    for i in range(entry["count"]):
        stem = directory / f"{split}_{i:05d}"
        inputs.append(read_tensor(f"{stem}_u.pouf"))
        targets.append(read_tensor(f"{stem}_v.pouf"))
        masks.append(read_tensor(f"{stem}_mask.pouf").astype(bool))
    for arr in inputs + targets:
        if arr.shape[:-1] != grid.shape:
            raise FieldFormatError(f"{directory}: sample shape {arr.shape} does not match grid {grid.shape}")
    return PairSet(grid, np.stack(inputs), np.stack(targets), np.stack(masks), entry["seeds"],
                   entry.get("angles", []))


SERIES_FILES = {"fine": "series_fine.pouf", "filtered": "series_filtered.pouf", "coarse": "series_coarse.pouf"}


def save_closure(directory, closure) -> dict:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for key, name in SERIES_FILES.items():
        write_tensor(directory / name, getattr(closure, key))
    return {
        "fine_grid": closure.fine_grid.to_dict(),
        "coarse_grid": closure.coarse_grid.to_dict(),
        "dt": closure.dt, "nu": closure.nu,
        "stride": closure.stride, "filter_width": closure.filter_width,
        "files": dict(SERIES_FILES),
    }


def load_closure(directory):
    manifest = read_manifest(directory)
    if manifest.get("kind") != "burgers":
        raise FieldFormatError(f"{directory}: not a closure dataset (kind {manifest.get('kind')!r})")
    series = {key: read_tensor(Path(directory) / name) for key, name in manifest["files"].items()}
    return ClosureSeries(GridSpec.from_dict(manifest["fine_grid"]), GridSpec.from_dict(manifest["coarse_grid"]),
                         series["fine"], series["filtered"], series["coarse"], manifest["dt"], manifest["nu"],
                         manifest["stride"], manifest["filter_width"])
