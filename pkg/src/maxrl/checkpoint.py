"""Versioned binary checkpoints.

Layout::

    b"MAXRLCKP"                     8-byte magic
    uint32 little-endian            header length in bytes
    header                          UTF-8 JSON: format_version, step, seed,
                                    architecture, extra, and an ordered list of
                                    {name, shape} entries
    payload                         every array in header order, C-contiguous
                                    little-endian float64

Arrays round-trip bit-exactly.
"""

from __future__ import annotations

import json
import os
import struct
from pathlib import Path
from typing import Any, Mapping

import numpy as np

from maxrl.optim import ParameterVector

MAGIC = b"MAXRLCKP"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


def write_checkpoint(path: str | os.PathLike, arrays: Mapping[str, np.ndarray], *, step: int, seed: int | None,
                     architecture: Mapping[str, Any], extra: Mapping[str, Any] | None = None) -> Path:
    path = Path(path)
    entries = []
    blobs = []
    for name, arr in arrays.items():
        a = np.ascontiguousarray(arr, dtype="<f8")
        entries.append({"name": name, "shape": list(a.shape)})
        blobs.append(a.tobytes())
    header = {
        "format_version": FORMAT_VERSION,
        "step": int(step),
        "seed": seed,
        "architecture": dict(architecture),
        "extra": dict(extra or {}),
        "arrays": entries,
    }
    raw = json.dumps(header, sort_keys=True).encode("utf-8")
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(raw)))
        fh.write(raw)
        for blob in blobs:
            fh.write(blob)
    os.replace(tmp, path)
    return path


def read_checkpoint(path: str | os.PathLike) -> tuple[dict, dict[str, np.ndarray]]:
    data = Path(path).read_bytes()
    if data[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    (size,) = struct.unpack("<I", data[8:12])
    header = json.loads(data[12 : 12 + size].decode("utf-8"))
    if header.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported format version {header.get('format_version')}")
    offset = 12 + size
    arrays: dict[str, np.ndarray] = {}
    for entry in header["arrays"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        end = offset + 8 * count
        if end > len(data):
            raise CheckpointError(f"{path}: truncated payload at {entry['name']}")
        arrays[entry["name"]] = np.frombuffer(data[offset:end], dtype="<f8").reshape(shape).astype(np.float64)
        offset = end
    if offset != len(data):
        raise CheckpointError(f"{path}: {len(data) - offset} trailing bytes")
    return header, arrays


def save_parameters(path, params: ParameterVector, architecture: Mapping[str, Any], extra=None) -> Path:
    return write_checkpoint(path, params.arrays(), step=params.step, seed=params.seed,
                            architecture=architecture, extra=extra)


def load_parameters(path) -> tuple[ParameterVector, dict]:
    header, arrays = read_checkpoint(path)
    params = ParameterVector(
        {k: v for k, v in arrays.items() if not k.startswith("opt.")},
        step=header["step"],
        seed=header["seed"],
    )
    return params, header
