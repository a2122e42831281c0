"""Single-file tensor archives: a JSON header followed by raw tensors.

Layout::

    b"RGCNARC1"                      8-byte magic
    uint64 little-endian              header length in bytes
    header                            UTF-8 JSON, sorted keys
    tensor payloads                   row-major little-endian float64/int64

The header lists every tensor as ``[name, dtype, shape]`` in payload
order. Writing is byte-deterministic, so identical content always yields
identical files.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"RGCNARC1"
_DTYPES = {"f8": np.dtype("<f8"), "i8": np.dtype("<i8")}


class ArchiveError(ValueError):
    pass


def _code(arr: np.ndarray) -> str:
    if np.issubdtype(arr.dtype, np.floating):
        return "f8"
    if np.issubdtype(arr.dtype, np.integer) or arr.dtype == np.bool_:
        return "i8"
    raise ArchiveError(f"unsupported dtype {arr.dtype}")


def dumps(header: dict, tensors: dict[str, np.ndarray]) -> bytes:
    table = []
    payload = []
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        code = _code(arr)
        table.append([name, code, list(arr.shape)])
        payload.append(np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes())
    head = dict(header)
    head["tensors"] = table
    raw = json.dumps(head, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return MAGIC + struct.pack("<Q", len(raw)) + raw + b"".join(payload)


def loads(blob: bytes) -> tuple[dict, dict[str, np.ndarray]]:
    if blob[:8] != MAGIC:
        raise ArchiveError("not a tensor archive (bad magic)")
    (hlen,) = struct.unpack("<Q", blob[8:16])
    header = json.loads(blob[16:16 + hlen].decode("utf-8"))
    offset = 16 + hlen
    tensors = {}
    for name, code, shape in header["tensors"]:
        dt = _DTYPES[code]
        count = int(np.prod(shape, dtype=np.int64))
        end = offset + count * dt.itemsize
        if end > len(blob):
            raise ArchiveError(f"truncated archive while reading {name!r}")
        tensors[name] = np.frombuffer(blob[offset:end], dtype=dt).reshape(shape).astype(dt.newbyteorder("="))
        offset = end
    if offset != len(blob):
        raise ArchiveError("trailing bytes after last tensor")
    return header, tensors


def write(path, header: dict, tensors: dict[str, np.ndarray]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(dumps(header, tensors))
    return path


def read(path) -> tuple[dict, dict[str, np.ndarray]]:
    return loads(Path(path).read_bytes())
