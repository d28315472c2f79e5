"""Versioned binary model files.

Layout: ``PSCNN1\\0`` magic, little-endian u32 length + UTF-8 JSON config
block (network config, box, train config, history, tensor manifest), the
tensors as float64 little-endian in declaration order, then a 32-byte
SHA-256 of everything before it.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from ..sampling import ThicknessBox
from .network import Network, NetworkConfig
from .train import History, TrainConfig, TrainedModel

MAGIC = b"PSCNN1\0"
VERSION = 1


class ModelFileError(ValueError):
    pass


def save_model(model: TrainedModel, path) -> Path:
    path = Path(path)
    net = model.network
    state = net.state()
    header = {
        "version": VERSION,
        "network": net.config.to_dict(),
        "dtype": net.dtype.name,
        "box": model.box.as_dict(),
        "train": model.train_config.to_dict() if model.train_config else None,
        "history": model.history.to_dict(),
        "tensors": [[name, list(arr.shape)] for name, arr in state.items()],
    }
    blob = json.dumps(header, sort_keys=True).encode()
    body = bytearray(MAGIC)
    body += struct.pack("<I", len(blob)) + blob
    for arr in state.values():
        body += np.ascontiguousarray(arr, dtype="<f8").tobytes()
    body += hashlib.sha256(body).digest()
    path.write_bytes(bytes(body))
    return path


def load_model(path) -> TrainedModel:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise ModelFileError(f"{path}: cannot read model ({exc.strerror})") from None
    if raw[: len(MAGIC)] != MAGIC:
        raise ModelFileError(f"{path}: not a model file (bad magic)")
    if hashlib.sha256(raw[:-32]).digest() != raw[-32:]:
        raise ModelFileError(f"{path}: checksum mismatch, file is corrupted")
    pos = len(MAGIC)
    (hlen,) = struct.unpack_from("<I", raw, pos)
    pos += 4
    header = json.loads(raw[pos : pos + hlen])
    pos += hlen
    if header.get("version") != VERSION:
        raise ModelFileError(f"{path}: unsupported model version {header.get('version')}")
    state = {}
    for name, shape in header["tensors"]:
        count = int(np.prod(shape)) if shape else 1
        state[name] = np.frombuffer(raw, dtype="<f8", count=count, offset=pos).reshape(shape)
        pos += 8 * count
    if pos != len(raw) - 32:
        raise ModelFileError(f"{path}: tensor data length does not match header")
    cfg = NetworkConfig.from_dict(header["network"])
    net = Network(cfg, dtype=header["dtype"])
    net.load_state(state)
    tc = TrainConfig(**header["train"]) if header["train"] else None
    return TrainedModel(net, ThicknessBox.from_dict(header["box"]), tc, History(**header["history"]))
