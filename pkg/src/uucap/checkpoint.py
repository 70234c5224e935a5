"""Binary model checkpoints.

Layout (all integers little-endian):

    magic            4 bytes   ``UCM1``
    metadata length  u32
    metadata         UTF-8 JSON, sorted keys, no whitespace
    tensors          float32 values, one tensor after another in the
                     canonical parameter order for the architecture

The metadata object holds ``architecture`` (every config field),
``vocabulary`` (same structure as the vocabulary JSON file), ``seed``
(the run seed) and ``best_epoch``.  Writing the same model twice
produces identical bytes, which the pipeline's determinism guarantees
rely on.
"""

from __future__ import annotations

import dataclasses
import json
import struct
from pathlib import Path

import numpy as np

from .captioner import ArchitectureConfig, CaptionerParams, param_shapes
from .text import Vocabulary, vocabulary_from_dict, vocabulary_to_dict

MAGIC = b"UCM1"


class CheckpointFormatError(ValueError):
    """Raised when checkpoint bytes do not parse as a valid model file."""


@dataclasses.dataclass(frozen=True)
class Checkpoint:
    params: CaptionerParams
    arch: ArchitectureConfig
    vocab: Vocabulary
    seed: int
    best_epoch: int


def checkpoint_bytes(ckpt: Checkpoint) -> bytes:
    meta = {
        "architecture": dataclasses.asdict(ckpt.arch),
        "vocabulary": vocabulary_to_dict(ckpt.vocab),
        "seed": ckpt.seed,
        "best_epoch": ckpt.best_epoch,
    }
    blob = json.dumps(meta, sort_keys=True, separators=(",", ":"), ensure_ascii=False).encode("utf-8")
    parts = [MAGIC, struct.pack("<I", len(blob)), blob]
    for name, shape in param_shapes(ckpt.arch).items():
        tensor = ckpt.params[name]
        if tuple(tensor.shape) != shape:
            raise CheckpointFormatError(
                f"parameter {name} has shape {tuple(tensor.shape)}, expected {shape}"
            )
        parts.append(np.ascontiguousarray(tensor, dtype="<f4").tobytes())
    return b"".join(parts)


def save_checkpoint(ckpt: Checkpoint, path: str | Path) -> None:
    Path(path).write_bytes(checkpoint_bytes(ckpt))


def parse_checkpoint(data: bytes, source: str = "checkpoint") -> Checkpoint:
    if data[:4] != MAGIC:
        raise CheckpointFormatError(f"{source}: bad magic at offset 0 (expected {MAGIC!r})")
    if len(data) < 8:
        raise CheckpointFormatError(f"{source}: truncated header at offset {len(data)}")
    (meta_len,) = struct.unpack_from("<I", data, 4)
    offset = 8
    if len(data) < offset + meta_len:
        raise CheckpointFormatError(f"{source}: truncated metadata at offset {len(data)}")
    try:
        meta = json.loads(data[offset : offset + meta_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointFormatError(f"{source}: metadata is not valid JSON ({exc})") from exc
    offset += meta_len
    try:
        arch = ArchitectureConfig(**meta["architecture"])
        vocab = vocabulary_from_dict(meta["vocabulary"], source=f"{source} vocabulary")
        seed = int(meta["seed"])
        best_epoch = int(meta["best_epoch"])
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointFormatError(f"{source}: invalid metadata ({exc})") from exc
    params: CaptionerParams = {}
    for name, shape in param_shapes(arch).items():
        count = int(np.prod(shape))
        nbytes = 4 * count
        if len(data) < offset + nbytes:
            raise CheckpointFormatError(
                f"{source}: truncated tensor {name} at offset {offset} "
                f"(need {nbytes} bytes, have {len(data) - offset})"
            )
        flat = np.frombuffer(data, dtype="<f4", count=count, offset=offset)
        params[name] = flat.reshape(shape).copy()
        offset += nbytes
    if offset != len(data):
        raise CheckpointFormatError(
            f"{source}: {len(data) - offset} trailing bytes after last tensor at offset {offset}"
        )
    return Checkpoint(params=params, arch=arch, vocab=vocab, seed=seed, best_epoch=best_epoch)


def load_checkpoint(path: str | Path) -> Checkpoint:
    path = Path(path)
    return parse_checkpoint(path.read_bytes(), source=str(path))
