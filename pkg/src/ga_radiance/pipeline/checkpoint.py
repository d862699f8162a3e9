"""Binary checkpoints.

Layout::

    b"GARFCKPT"                 magic
    uint32 LE                   format version
    64 ASCII hex bytes          model config hash
    uint32 LE + UTF-8 JSON      {"segments": [...], "metadata": {...}}
    float64 LE * n              flat parameter vector

The JSON is written with sorted keys and no timestamps so that reruns are
byte-identical.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from ..params import ModelParams, ParamLayout

MAGIC = b"GARFCKPT"
VERSION = 1


class CheckpointError(ValueError):
    pass


class ConfigHashMismatch(CheckpointError):
    def __init__(self, expected: str, found: str):
        super().__init__(f"config hash mismatch: model spec {expected}, checkpoint {found}")
        self.expected = expected
        self.found = found


def save_checkpoint(path, params: ModelParams, config_hash: str, metadata: dict | None = None) -> None:
    if len(config_hash) != 64:
        raise ValueError("config hash must be a 64-character hex digest")
    index = json.dumps({"segments": params.layout.to_json(), "metadata": metadata or {}}, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(config_hash.encode("ascii"))
        fh.write(struct.pack("<I", len(index)))
        fh.write(index)
        fh.write(params.vector.astype("<f8").tobytes())


def read_checkpoint(path) -> tuple[str, list[dict], dict, np.ndarray]:
    """Return ``(config_hash, segments, metadata, vector)``."""
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    (version,) = struct.unpack_from("<I", data, 8)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    config_hash = data[12:76].decode("ascii")
    (n,) = struct.unpack_from("<I", data, 76)
    index = json.loads(data[80 : 80 + n])
    vector = np.frombuffer(data[80 + n :], dtype="<f8").astype(np.float64)
    return config_hash, index["segments"], index["metadata"], vector


def load_checkpoint(path, layout: ParamLayout, config_hash: str) -> tuple[ModelParams, dict]:
    """Load against an expected layout; refuses checkpoints of a different config."""
    found, segments, metadata, vector = read_checkpoint(path)
    if found != config_hash:
        raise ConfigHashMismatch(config_hash, found)
    if segments != layout.to_json():
        raise CheckpointError(f"{path}: segment index does not match the model layout")
    return ModelParams(layout, vector), metadata
