"""Binary tensor files and parameter checkpoints.

Tensor file::

    b"STQATNSR" | u32 rank | u32 extent * rank | f64 payload (little-endian)

Checkpoint file::

    b"STQACKPT" | u32 format version | u32 header length | UTF-8 JSON header
    | f64 payload of every parameter, in header order (little-endian)

The JSON header is written with sorted keys and fixed separators so that
``save(load(path))`` reproduces ``path`` byte for byte.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from . import __version__
from .errors import ValidationError

TENSOR_MAGIC = b"STQATNSR"
CHECKPOINT_MAGIC = b"STQACKPT"
CHECKPOINT_FORMAT = 1


def dumps_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=1, ensure_ascii=False) + "\n"


def encode_tensor(arr) -> bytes:
    arr = np.array(arr, dtype="<f8", order="C")
    head = TENSOR_MAGIC + struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape)
    return head + arr.tobytes()


def decode_tensor(buf: bytes, source: str = "<bytes>") -> np.ndarray:
    if len(buf) < 12 or buf[:8] != TENSOR_MAGIC:
        raise ValidationError(f"{source}: not a tensor file (bad magic)")
    (rank,) = struct.unpack_from("<I", buf, 8)
    head = 12 + 4 * rank
    if len(buf) < head:
        raise ValidationError(f"{source}: truncated tensor header")
    shape = struct.unpack_from(f"<{rank}I", buf, 12)
    expected = int(np.prod(shape, dtype=np.int64)) * 8
    if len(buf) - head != expected:
        raise ValidationError(
            f"{source}: payload is {len(buf) - head} bytes, shape {tuple(shape)} needs {expected}")
    return np.frombuffer(buf, dtype="<f8", offset=head).astype(np.float64).reshape(shape)


def write_tensor(path, arr) -> None:
    Path(path).write_bytes(encode_tensor(arr))


def read_tensor(path) -> np.ndarray:
    return decode_tensor(Path(path).read_bytes(), str(path))


@dataclass
class Checkpoint:
    """Named float64 parameters of one trained channel plus its configuration."""

    channel: str
    params: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)
    seed: int = 0
    engine_version: str = __version__

    def header(self) -> dict:
        return {
            "channel": self.channel,
            "config": self.config,
            "engine_version": self.engine_version,
            "params": [{"name": k, "shape": list(np.shape(v))} for k, v in self.params.items()],
            "seed": int(self.seed),
        }

    def to_bytes(self) -> bytes:
        head = json.dumps(self.header(), sort_keys=True, separators=(",", ":")).encode("utf-8")
        parts = [CHECKPOINT_MAGIC, struct.pack("<II", CHECKPOINT_FORMAT, len(head)), head]
        parts += [np.ascontiguousarray(v, dtype="<f8").tobytes() for v in self.params.values()]
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, buf: bytes, source: str = "<bytes>") -> "Checkpoint":
        if buf[:8] != CHECKPOINT_MAGIC:
            raise ValidationError(f"{source}: not a checkpoint (bad magic)")
        version, hlen = struct.unpack_from("<II", buf, 8)
        if version != CHECKPOINT_FORMAT:
            raise ValidationError(f"{source}: unsupported checkpoint format {version}")
        try:
            head = json.loads(buf[16:16 + hlen].decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise ValidationError(f"{source}: corrupt checkpoint header ({exc})") from None
        offset = 16 + hlen
        params = {}
        for rec in head["params"]:
            shape = tuple(rec["shape"])
            nbytes = int(np.prod(shape, dtype=np.int64)) * 8
            if offset + nbytes > len(buf):
                raise ValidationError(f"{source}: payload for {rec['name']!r} is truncated")
            params[rec["name"]] = np.frombuffer(buf, dtype="<f8", count=nbytes // 8,
                                                offset=offset).astype(np.float64).reshape(shape)
            offset += nbytes
        if offset != len(buf):
            raise ValidationError(f"{source}: {len(buf) - offset} trailing bytes")
        return cls(channel=head["channel"], params=params, config=head["config"],
                   seed=head["seed"], engine_version=head["engine_version"])

    def save(self, path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path) -> "Checkpoint":
        return cls.from_bytes(Path(path).read_bytes(), str(path))

    def table(self) -> list[tuple[str, tuple, int]]:
        return [(k, tuple(np.shape(v)), int(np.size(v))) for k, v in self.params.items()]


def params_to_arrays(params: Mapping) -> dict:
    return {k: np.array(v.data, dtype=np.float64) for k, v in params.items()}
