"""
Checkpoint container: magic, canonical model config, vocab hash, named parameter groups
"""
import struct
import logging
from pathlib import Path
from typing import Dict, Set

import numpy as np

from .model import ModelConfig, ModelParameters, group_of
from .seeding import DIGEST_SIZE

logger = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"XFCKPT1"


class CheckpointError(ValueError):
    """Raised for malformed checkpoint files"""


def _pack_str(text: str) -> bytes:
    raw = text.encode("utf-8")
    return struct.pack("<H", len(raw)) + raw


def checkpoint_bytes(params: ModelParameters) -> bytes:
    """Serialize parameters; tensors are stored as little-endian f32"""
    parts = [CHECKPOINT_MAGIC]
    config_raw = params.config.to_json().encode("utf-8")
    parts.append(struct.pack("<I", len(config_raw)))
    parts.append(config_raw)
    parts.append(params.vocab_hash)
    groups = params.groups()
    parts.append(struct.pack("<I", len(groups)))
    for group, names in groups.items():
        parts.append(_pack_str(group))
        parts.append(struct.pack("<I", len(names)))
        for name in names:
            arr = params.tensors[name]
            parts.append(_pack_str(name))
            parts.append(struct.pack("<B", arr.ndim))
            parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
            parts.append(arr.astype("<f4").tobytes())
    return b"".join(parts)


def save_checkpoint(params: ModelParameters, path: str):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    blob = checkpoint_bytes(params)
    with open(path, "wb") as f:
        f.write(blob)
    logger.info(f"Saved checkpoint ({len(params.tensors)} tensors, {len(blob)} bytes) to {path}")


class _Reader:
    def __init__(self, blob: bytes):
        self.blob = blob
        self.offset = 0

    def take(self, n: int) -> bytes:
        if self.offset + n > len(self.blob):
            raise CheckpointError("Checkpoint is truncated")
        out = self.blob[self.offset:self.offset + n]
        self.offset += n
        return out

    def unpack(self, fmt: str):
        size = struct.calcsize(fmt)
        return struct.unpack(fmt, self.take(size))

    def string(self) -> str:
        (n,) = self.unpack("<H")
        return self.take(n).decode("utf-8")


def parse_checkpoint(blob: bytes) -> ModelParameters:
    reader = _Reader(blob)
    if reader.take(len(CHECKPOINT_MAGIC)) != CHECKPOINT_MAGIC:
        raise CheckpointError("Bad checkpoint magic")
    (config_len,) = reader.unpack("<I")
    try:
        config = ModelConfig.from_json(reader.take(config_len).decode("utf-8"))
    except (ValueError, TypeError) as e:
        raise CheckpointError(f"Invalid model config in checkpoint: {e}") from None
    vocab_hash = reader.take(DIGEST_SIZE)
    tensors: Dict[str, np.ndarray] = {}
    (n_groups,) = reader.unpack("<I")
    for _ in range(n_groups):
        reader.string()
        (n_tensors,) = reader.unpack("<I")
        for _ in range(n_tensors):
            name = reader.string()
            (ndim,) = reader.unpack("<B")
            shape = reader.unpack(f"<{ndim}I")
            count = int(np.prod(shape)) if ndim else 1
            data = np.frombuffer(reader.take(count * 4), dtype="<f4").reshape(shape)
            tensors[name] = data.astype(np.float64)
    if reader.offset != len(blob):
        raise CheckpointError(f"{len(blob) - reader.offset} trailing bytes in checkpoint")
    return ModelParameters(config=config, tensors=tensors, vocab_hash=vocab_hash)


def load_checkpoint(path: str) -> ModelParameters:
    with open(path, "rb") as f:
        params = parse_checkpoint(f.read())
    logger.info(f"Loaded checkpoint from {path}")
    return params


def diff_checkpoints(a: ModelParameters, b: ModelParameters) -> Set[str]:
    """
    Names of parameter groups whose contents differ.

    A group differs when a tensor is added, removed, reshaped or changes any byte.
    """
    changed = set()
    for name in set(a.tensors) | set(b.tensors):
        left, right = a.tensors.get(name), b.tensors.get(name)
        if left is None or right is None or left.shape != right.shape or left.tobytes() != right.tobytes():
            changed.add(group_of(name))
    return changed
