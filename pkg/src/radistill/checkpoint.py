"""Binary checkpoint container.

Layout: 8-byte magic, little-endian uint32 header length, UTF-8 JSON header,
then the parameter buffer as little-endian float32.
"""
from __future__ import annotations

import json
import os
import struct
from pathlib import Path

import numpy as np

from .fields import FIELD_TYPES, FieldPair, canonical_arch, config_from_dict, config_to_dict
from .optim import ParamStore

MAGIC = b"RADFLD01"


class CheckpointError(ValueError):
    pass


def save_checkpoint(field: FieldPair, path, extra: dict | None = None) -> Path:
    path = Path(path)
    header = {
        "arch_tag": field.arch_tag,
        "config": config_to_dict(field.config),
        "feature_dim": field.feature_dim,
        "param_count": len(field.params),
        "seed": field.seed,
        "layout": field.params.layout(),
    }
    if extra:
        header["extra"] = extra
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    payload = field.params.values.astype("<f4").tobytes()
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(payload)
    os.replace(tmp, path)
    return path


def read_header(path) -> dict:
    with open(path, "rb") as fh:
        return _read_header(fh, path)


def _read_header(fh, path) -> dict:
    magic = fh.read(len(MAGIC))
    if magic != MAGIC:
        raise CheckpointError(f"{path}: not a field checkpoint (bad magic)")
    (n,) = struct.unpack("<I", fh.read(4))
    try:
        return json.loads(fh.read(n).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt header: {exc}") from exc


def load_checkpoint(path, dtype=np.float32) -> FieldPair:
    path = Path(path)
    with open(path, "rb") as fh:
        header = _read_header(fh, path)
        payload = np.frombuffer(fh.read(), dtype="<f4")
    if payload.size != header["param_count"]:
        raise CheckpointError(f"{path}: header says {header['param_count']} params, "
                              f"payload holds {payload.size}")
    arch = canonical_arch(header["arch_tag"])
    config = config_from_dict(arch, header["config"])
    store = ParamStore.from_layout(header["layout"], payload, dtype)
    field = FIELD_TYPES[arch](config, store, header.get("seed", 0))
    if field.feature_dim != header["feature_dim"]:
        raise CheckpointError(f"{path}: feature_dim mismatch ({field.feature_dim} vs "
                              f"{header['feature_dim']})")
    return field
