"""Binary checkpoint format.

Layout: ``b"SDCCKPT1"``, a 4-byte little-endian manifest length, the JSON
manifest ``{version, spec, config, tensors: [{name, shape, dtype, offset, len}]}``
and then the little-endian tensor payloads back to back.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..net.model import NetworkSpec, check_params

MAGIC = b"SDCCKPT1"
VERSION = 1
_DTYPES = {"float64": "<f8", "float32": "<f4"}


class CheckpointError(ValueError):
    pass


class TruncatedCheckpointError(CheckpointError):
    pass


@dataclass
class Checkpoint:
    params: dict[str, np.ndarray]
    spec: NetworkSpec
    config: dict = field(default_factory=dict)


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    tensors, payloads, offset = [], [], 0
    for name, arr in ckpt.params.items():
        dt = np.dtype(arr.dtype).name
        if dt not in _DTYPES:
            raise CheckpointError(f"tensor {name}: unsupported dtype {dt}")
        raw = np.ascontiguousarray(arr, dtype=_DTYPES[dt]).tobytes()
        tensors.append({"name": name, "shape": list(arr.shape), "dtype": dt, "offset": offset, "len": len(raw)})
        payloads.append(raw)
        offset += len(raw)
    manifest = json.dumps({"version": VERSION, "spec": ckpt.spec.to_json(), "config": ckpt.config,
                           "tensors": tensors}, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(manifest)))
        fh.write(manifest)
        for raw in payloads:
            fh.write(raw)


def load_checkpoint(path, spec: NetworkSpec | None = None) -> Checkpoint:
    """Read a checkpoint; with ``spec`` given, tensors must match its shapes."""
    raw = Path(path).read_bytes()
    if len(raw) < len(MAGIC) + 4:
        raise TruncatedCheckpointError(f"{path}: file too short for a checkpoint header")
    if raw[:len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path}: bad magic {raw[:len(MAGIC)]!r}")
    (mlen,) = struct.unpack("<I", raw[len(MAGIC):len(MAGIC) + 4])
    start = len(MAGIC) + 4
    if len(raw) < start + mlen:
        raise TruncatedCheckpointError(f"{path}: manifest truncated")
    try:
        manifest = json.loads(raw[start:start + mlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: unreadable manifest") from exc
    if manifest.get("version") != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {manifest.get('version')}")
    base = start + mlen
    params = {}
    try:
        for t in manifest["tensors"]:
            dt = np.dtype(_DTYPES[t["dtype"]])
            if t["len"] != int(np.prod(t["shape"], dtype=np.int64)) * dt.itemsize:
                raise CheckpointError(f"{path}: tensor {t['name']} length does not match its shape")
            lo = base + t["offset"]
            hi = lo + t["len"]
            if hi > len(raw):
                raise TruncatedCheckpointError(f"{path}: payload of tensor {t['name']} is truncated")
            arr = np.frombuffer(raw[lo:hi], dtype=dt).reshape(t["shape"])
            params[t["name"]] = arr.astype(t["dtype"])
        stored = NetworkSpec.from_json(manifest["spec"])
    except (KeyError, TypeError) as exc:
        raise CheckpointError(f"{path}: malformed manifest ({exc})") from exc
    target = spec or stored
    check_params(target, params)
    return Checkpoint(params, target, manifest.get("config", {}))
