"""Binary checkpoint files: one per sub-model, named tensors behind a JSON header.

Layout (all integers little-endian)::

    offset  size  field
    0       8     magic  b"DARSCKPT"
    8       4     uint32 format version (currently 1)
    12      4     uint32 header length H in bytes
    16      H     UTF-8 JSON header
    16+H    ...   tensor payload, tensors back to back

The header is ``{"module": str, "meta": {...}, "tensors": [entry, ...]}``
where each entry is ``{"name", "dtype", "shape", "offset", "nbytes"}`` and
``offset`` is relative to the start of the payload. ``dtype`` is one of
``float32``, ``float64``, ``int64``; data is stored row-major little-endian.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np
import torch

MAGIC = b"DARSCKPT"
VERSION = 1
_PREFIX = struct.Struct("<8sII")
_DTYPES = {torch.float32: "<f4", torch.float64: "<f8", torch.int64: "<i8"}
_NAMES = {"<f4": "float32", "<f8": "float64", "<i8": "int64"}
_FROM_NAME = {v: k for k, v in _NAMES.items()}


class CheckpointError(ValueError):
    pass


def save_tensors(path, module: str, tensors: dict[str, torch.Tensor], meta: dict | None = None) -> None:
    entries, chunks, offset = [], [], 0
    for name, tensor in tensors.items():
        t = tensor.detach().cpu().contiguous()
        if t.dtype not in _DTYPES:
            raise CheckpointError(f"{name}: unsupported dtype {t.dtype}")
        code = _DTYPES[t.dtype]
        raw = np.ascontiguousarray(t.numpy(), dtype=code).tobytes()
        entries.append({"name": name, "dtype": _NAMES[code], "shape": list(t.shape), "offset": offset, "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    header = json.dumps({"module": module, "meta": meta or {}, "tensors": entries}, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(_PREFIX.pack(MAGIC, VERSION, len(header)))
        fh.write(header)
        for raw in chunks:
            fh.write(raw)


def load_tensors(path) -> tuple[str, dict, dict[str, torch.Tensor]]:
    data = Path(path).read_bytes()
    if len(data) < _PREFIX.size:
        raise CheckpointError(f"{path}: truncated checkpoint")
    magic, version, hlen = _PREFIX.unpack_from(data)
    if magic != MAGIC:
        raise CheckpointError(f"{path}: not a DARS checkpoint")
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    header = json.loads(data[_PREFIX.size : _PREFIX.size + hlen].decode())
    base = _PREFIX.size + hlen
    tensors = {}
    for e in header["tensors"]:
        start = base + e["offset"]
        arr = np.frombuffer(data[start : start + e["nbytes"]], dtype=_FROM_NAME[e["dtype"]])
        tensors[e["name"]] = torch.from_numpy(arr.reshape(e["shape"]).copy())
    return header["module"], header["meta"], tensors
