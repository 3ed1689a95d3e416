"""Binary checkpoint format.

Layout (all integers little-endian)::

    b"VFL1"                      magic
    u32 version
    u32 meta_len, meta           UTF-8 JSON: model config, class ids, trained flags, run config
    u32 n_tensors
    n_tensors x (u16 name_len, name, u8 ndim, ndim x u32 dim, float64[prod(dims)] payload)
    32-byte SHA-256 of everything above
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .errors import CompatibilityError, CorruptCheckpointError, CheckpointVersionError
from .pipeline import ModelConfig, PipelineModel

MAGIC = b"VFL1"
VERSION = 1
_DIGEST = 32


def encode(model: PipelineModel, run_config: dict | None = None) -> bytes:
    meta = {
        "model": asdict(model.config),
        "class_ids": list(model.class_ids),
        "trained": dict(model.trained),
        "run_config": run_config,
    }
    meta_bytes = json.dumps(meta, sort_keys=True).encode("utf-8")
    parts = [MAGIC, struct.pack("<II", VERSION, len(meta_bytes)), meta_bytes]
    params = model.named_parameters()
    parts.append(struct.pack("<I", len(params)))
    for name, t in params.items():
        raw = name.encode("utf-8")
        parts.append(struct.pack("<H", len(raw)) + raw)
        parts.append(struct.pack("<B", t.ndim) + struct.pack(f"<{t.ndim}I", *t.shape))
        parts.append(np.ascontiguousarray(t.data, dtype="<f8").tobytes())
    body = b"".join(parts)
    return body + hashlib.sha256(body).digest()


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise CorruptCheckpointError("checkpoint is truncated")
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def decode(buf: bytes) -> tuple[dict, dict[str, np.ndarray]]:
    if len(buf) < len(MAGIC) + 8 + _DIGEST or buf[:4] != MAGIC:
        raise CorruptCheckpointError("not a checkpoint (bad magic or too short)")
    body, digest = buf[:-_DIGEST], buf[-_DIGEST:]
    if hashlib.sha256(body).digest() != digest:
        raise CorruptCheckpointError("checksum mismatch")
    reader = _Reader(body)
    reader.take(4)
    (version,) = reader.unpack("<I")
    if version != VERSION:
        raise CheckpointVersionError(f"checkpoint version {version} is not supported (expected {VERSION})")
    (meta_len,) = reader.unpack("<I")
    meta = json.loads(reader.take(meta_len).decode("utf-8"))
    (count,) = reader.unpack("<I")
    tensors = {}
    for _ in range(count):
        (name_len,) = reader.unpack("<H")
        name = reader.take(name_len).decode("utf-8")
        (ndim,) = reader.unpack("<B")
        shape = reader.unpack(f"<{ndim}I")
        n = int(np.prod(shape)) if ndim else 1
        tensors[name] = np.frombuffer(reader.take(8 * n), dtype="<f8").reshape(shape).astype(np.float64)
    if reader.pos != len(body):
        raise CorruptCheckpointError("trailing bytes after tensor table")
    return meta, tensors


def save_checkpoint(model: PipelineModel, path, run_config: dict | None = None) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode(model, run_config))


def read_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    return decode(Path(path).read_bytes())


def restore_parameters(model: PipelineModel, tensors: dict[str, np.ndarray]) -> None:
    """Copy stored arrays into ``model``; any name or shape difference is an error."""
    params = model.named_parameters()
    if set(params) != set(tensors):
        missing = sorted(set(params) - set(tensors))
        extra = sorted(set(tensors) - set(params))
        raise CompatibilityError(f"parameter names differ (missing {missing[:3]}, unexpected {extra[:3]})")
    for name, t in params.items():
        if t.shape != tensors[name].shape:
            raise CompatibilityError(f"{name}: checkpoint shape {tensors[name].shape} vs model {t.shape}")
    for name, t in params.items():
        t.data[...] = tensors[name]


def load_checkpoint(path, model: PipelineModel | None = None) -> PipelineModel:
    """Rebuild the stored model, or load the stored parameters into ``model``."""
    meta, tensors = read_checkpoint(path)
    if model is None:
        model = PipelineModel.create(ModelConfig(**meta["model"]), seed=0, class_ids=meta["class_ids"])
    restore_parameters(model, tensors)
    model.trained = {k: bool(v) for k, v in meta["trained"].items()}
    if not model.class_ids:
        model.class_ids = list(meta["class_ids"])
    return model


def checkpoint_run_config(path) -> dict | None:
    return read_checkpoint(path)[0].get("run_config")
