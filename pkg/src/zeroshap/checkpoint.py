"""Single-file checkpoint format: JSON header followed by raw little-endian arrays.

Layout: 8-byte magic ``ZSHAPCK1``, little-endian uint64 header byte length,
UTF-8 JSON header, then each array's raw bytes in header order. The header
lists format_version, a kind tag, free-form config/metadata, and an array
table with name/shape/dtype. Float arrays are ``<f8``, integer arrays ``<i8``.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"ZSHAPCK1"
FORMAT_VERSION = 1

_DTYPES = {"<f8": np.dtype("<f8"), "<i8": np.dtype("<i8")}


class CheckpointError(IOError):
    pass


def save_checkpoint(path, kind: str, arrays: dict[str, np.ndarray],
                    config: dict | None = None, metadata: dict | None = None) -> None:
    entries = []
    blobs = []
    for name in sorted(arrays):
        arr = np.ascontiguousarray(arrays[name])
        if arr.dtype.kind == "f":
            arr = arr.astype("<f8", copy=False)
            dtype = "<f8"
        elif arr.dtype.kind in "iu":
            arr = arr.astype("<i8", copy=False)
            dtype = "<i8"
        else:
            raise CheckpointError(f"unsupported dtype {arr.dtype} for array {name!r}")
        entries.append({"name": name, "shape": list(arr.shape), "dtype": dtype})
        blobs.append(arr.tobytes())
    header = {
        "format_version": FORMAT_VERSION,
        "kind": kind,
        "config": config or {},
        "metadata": metadata or {},
        "arrays": entries,
    }
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(header_bytes)))
        fh.write(header_bytes)
        for blob in blobs:
            fh.write(blob)
    tmp.replace(path)


def load_checkpoint(path, expected_kind: str | None = None):
    """Return (arrays, config, metadata); raises CheckpointError on bad files."""
    raw = Path(path).read_bytes()
    if len(raw) < len(MAGIC) + 8 or raw[: len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file (bad magic)")
    (header_len,) = struct.unpack("<Q", raw[len(MAGIC) : len(MAGIC) + 8])
    body_start = len(MAGIC) + 8
    if len(raw) < body_start + header_len:
        raise CheckpointError(f"{path}: truncated header")
    header = json.loads(raw[body_start : body_start + header_len].decode("utf-8"))
    version = header.get("format_version")
    if version != FORMAT_VERSION:
        raise CheckpointError(
            f"{path}: format version mismatch (file has {version}, reader supports {FORMAT_VERSION})"
        )
    if expected_kind is not None and header.get("kind") != expected_kind:
        raise CheckpointError(f"{path}: expected kind {expected_kind!r}, found {header.get('kind')!r}")
    arrays: dict[str, np.ndarray] = {}
    offset = body_start + header_len
    for entry in header["arrays"]:
        dtype = _DTYPES[entry["dtype"]]
        shape = tuple(entry["shape"])
        nbytes = dtype.itemsize * int(np.prod(shape)) if shape else dtype.itemsize
        if len(raw) < offset + nbytes:
            raise CheckpointError(f"{path}: truncated array data for {entry['name']!r}")
        arrays[entry["name"]] = np.frombuffer(raw, dtype=dtype, count=int(np.prod(shape)), offset=offset).reshape(shape).copy()
        offset += nbytes
    if offset != len(raw):
        raise CheckpointError(f"{path}: {len(raw) - offset} trailing bytes")
    return arrays, header["config"], header["metadata"]
