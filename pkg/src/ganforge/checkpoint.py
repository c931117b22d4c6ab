"""Versioned binary checkpoint container.

Layout (all integers little-endian uint32)::

    b"GANFORGE"                     8-byte magic
    version
    config length, config bytes     UTF-8 JSON, keys sorted
    tensor count
    per tensor:
        name length, name bytes (UTF-8)
        rank, extents[rank]
        raw little-endian float32 values, row-major

Tensors are written in the order given, which is declaration order for
network parameters.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import BinaryIO, Union

import numpy as np

from .errors import CheckpointError

__all__ = ["MAGIC", "VERSION", "Checkpoint", "write_checkpoint", "read_checkpoint", "read_header"]

MAGIC = b"GANFORGE"
VERSION = 1
_U32 = struct.Struct("<I")


@dataclass
class Checkpoint:
    config: dict
    tensors: dict[str, np.ndarray] = field(default_factory=dict)
    version: int = VERSION

    def section(self, prefix: str) -> dict[str, np.ndarray]:
        """Tensors under ``prefix.``, with the prefix stripped."""
        p = prefix + "."
        return {k[len(p):]: v for k, v in self.tensors.items() if k.startswith(p)}


def _put(f: BinaryIO, n: int) -> None:
    f.write(_U32.pack(n))


def write_checkpoint(path: Union[str, Path], config: dict, tensors: dict[str, np.ndarray]) -> Path:
    path = Path(path)
    blob = json.dumps(config, sort_keys=True, separators=(",", ":")).encode("utf-8")
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as f:
        f.write(MAGIC)
        _put(f, VERSION)
        _put(f, len(blob))
        f.write(blob)
        _put(f, len(tensors))
        for name, arr in tensors.items():
            raw_name = name.encode("utf-8")
            arr = np.asarray(arr, dtype="<f4")
            _put(f, len(raw_name))
            f.write(raw_name)
            _put(f, arr.ndim)
            for n in arr.shape:
                _put(f, n)
            f.write(arr.tobytes(order="C"))
    tmp.replace(path)
    return path


class _Reader:
    def __init__(self, data: bytes, path: Path):
        self.data = data
        self.pos = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError(f"{self.path}: truncated checkpoint at byte {self.pos}")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def u32(self) -> int:
        return _U32.unpack(self.take(4))[0]


def _open(path: Union[str, Path]) -> tuple[_Reader, int, dict]:
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e}") from e
    r = _Reader(data, path)
    if r.take(len(MAGIC)) != MAGIC:
        raise CheckpointError(f"{path}: bad magic, not a ganforge checkpoint")
    version = r.u32()
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    try:
        config = json.loads(r.take(r.u32()).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"{path}: corrupt config block: {e}") from e
    return r, version, config


def _tensor_headers(r: _Reader, load: bool):
    count = r.u32()
    for _ in range(count):
        try:
            name = r.take(r.u32()).decode("utf-8")
        except UnicodeDecodeError as e:
            raise CheckpointError(f"{r.path}: corrupt tensor name") from e
        shape = tuple(r.u32() for _ in range(r.u32()))
        nbytes = 4 * int(np.prod(shape, dtype=np.int64))
        raw = r.take(nbytes)
        arr = np.frombuffer(raw, dtype="<f4").reshape(shape).astype(np.float32) if load else None
        yield name, shape, arr
    if r.pos != len(r.data):
        raise CheckpointError(f"{r.path}: {len(r.data) - r.pos} trailing bytes after tensors")


def read_checkpoint(path: Union[str, Path]) -> Checkpoint:
    r, version, config = _open(path)
    tensors = {name: arr for name, _, arr in _tensor_headers(r, load=True)}
    return Checkpoint(config=config, tensors=tensors, version=version)


def read_header(path: Union[str, Path]) -> tuple[int, dict, list[tuple[str, tuple[int, ...]]]]:
    """Version, config block and (name, shape) census, without materializing values."""
    r, version, config = _open(path)
    census = [(name, shape) for name, shape, _ in _tensor_headers(r, load=False)]
    return version, config, census
