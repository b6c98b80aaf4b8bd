"""Flat binary weight checkpoints.

Layout (all integers little-endian uint32)::

    b"HIFI1"
    count
    count x [name_len, name (utf-8), rank, dims..., float32 payload (C order)]
    json_len, config JSON (utf-8)
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Dict, Tuple

import numpy as np

__all__ = ["MAGIC", "CheckpointError", "save_checkpoint", "load_checkpoint", "save_model", "load_model"]

MAGIC = b"HIFI1"


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, tensors: Dict[str, np.ndarray], config: dict) -> None:
    parts = [MAGIC, struct.pack("<I", len(tensors))]
    for name, arr in tensors.items():
        raw = name.encode("utf-8")
        arr = np.ascontiguousarray(arr, dtype="<f4")
        parts.append(struct.pack("<I", len(raw)) + raw)
        parts.append(struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.tobytes())
    blob = json.dumps(config, sort_keys=True).encode("utf-8")
    parts.append(struct.pack("<I", len(blob)) + blob)
    Path(path).write_bytes(b"".join(parts))


def load_checkpoint(path) -> Tuple[Dict[str, np.ndarray], dict]:
    buf = Path(path).read_bytes()
    if buf[:5] != MAGIC:
        raise CheckpointError(f"{path}: bad magic {buf[:5]!r}")
    pos = 5

    def take(n):
        nonlocal pos
        if pos + n > len(buf):
            raise CheckpointError(f"{path}: truncated at byte {pos}")
        out = buf[pos:pos + n]
        pos += n
        return out

    (count,) = struct.unpack("<I", take(4))
    tensors = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<I", take(4))
        name = take(name_len).decode("utf-8")
        (rank,) = struct.unpack("<I", take(4))
        dims = struct.unpack(f"<{rank}I", take(4 * rank))
        n = int(np.prod(dims)) if rank else 1
        tensors[name] = np.frombuffer(take(4 * n), dtype="<f4").reshape(dims).astype(np.float32)
    (json_len,) = struct.unpack("<I", take(4))
    config = json.loads(take(json_len).decode("utf-8"))
    if pos != len(buf):
        raise CheckpointError(f"{path}: {len(buf) - pos} trailing bytes")
    return tensors, config


def save_model(path, model, extra: dict = None) -> None:
    config = {"model": model.cfg.to_dict()}
    if extra:
        config.update(extra)
    save_checkpoint(path, model.state_dict(), config)


def load_model(path, dtype=np.float32):
    """Rebuild a model from the embedded config and load its weights."""
    from .model import HiFiSeg, ModelConfig

    tensors, config = load_checkpoint(path)
    model = HiFiSeg(ModelConfig.from_dict(config["model"]))
    try:
        model.load_state_dict(tensors)
    except (KeyError, ValueError) as exc:
        raise CheckpointError(f"{path}: checkpoint does not match its config: {exc}") from exc
    if np.dtype(dtype) != np.float32:
        model.astype(dtype)
    return model, config
