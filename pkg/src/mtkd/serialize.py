"""Binary file formats: matrix blobs and model checkpoints.

Matrix blob (spectrogram cache, graph feature matrix):
    8-byte header of two little-endian uint32 (rows, cols), followed by
    rows*cols little-endian float32 values in row-major order.

Checkpoint:
    6-byte magic ``MTKD1\\n``, a little-endian uint32 length, a UTF-8
    JSON manifest of that length, then for each parameter listed in
    ``manifest["params"]`` (sorted by name) the raw little-endian
    float64 data. Byte-for-byte deterministic given identical contents,
    so checkpoints can be compared by checksum.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

_MAGIC = b"MTKD1\n"


def write_matrix(path, matrix: np.ndarray) -> None:
    m = np.ascontiguousarray(matrix, dtype="<f4")
    if m.ndim != 2:
        raise ValueError(f"expected a 2-d matrix, got shape {m.shape}")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<II", m.shape[0], m.shape[1]))
        fh.write(m.tobytes(order="C"))


def read_matrix(path) -> np.ndarray:
    with open(path, "rb") as fh:
        rows, cols = struct.unpack("<II", fh.read(8))
        data = np.frombuffer(fh.read(rows * cols * 4), dtype="<f4")
    return data.reshape(rows, cols).astype(np.float64)


def save_checkpoint(path, manifest: dict, params: dict[str, np.ndarray]) -> None:
    """Write a model checkpoint; ``manifest`` must be JSON-serializable."""
    names = sorted(params)
    full = dict(manifest)
    full["params"] = [
        {"name": n, "shape": list(params[n].shape)} for n in names
    ]
    blob = json.dumps(full, sort_keys=True).encode("utf-8")
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for n in names:
            fh.write(np.ascontiguousarray(params[n], dtype="<f8").tobytes(order="C"))


def load_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    with open(path, "rb") as fh:
        if fh.read(len(_MAGIC)) != _MAGIC:
            raise ValueError(f"{path}: not a checkpoint file")
        (n,) = struct.unpack("<I", fh.read(4))
        manifest = json.loads(fh.read(n).decode("utf-8"))
        params = {}
        for entry in manifest.pop("params"):
            shape = tuple(entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            data = np.frombuffer(fh.read(count * 8), dtype="<f8")
            params[entry["name"]] = data.reshape(shape).astype(np.float64)
    return manifest, params


def write_json(path, obj) -> bytes:
    """Deterministic JSON dump (sorted keys); returns the bytes written."""
    data = (json.dumps(obj, sort_keys=True, indent=2) + "\n").encode("utf-8")
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(data)
    return data


def read_json(path):
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)
