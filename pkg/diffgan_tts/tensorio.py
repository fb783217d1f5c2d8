"""Named-tensor container files ("DGTT").

Layout, little-endian throughout:

    b"DGTT" | version u32 | meta length u32 | meta UTF-8 (key=value lines)
    count u32 | per tensor: name length u16, name UTF-8, rank u8,
                            dims u32 * rank, payload f32 * prod(dims)

Checkpoints and inference outputs share this format; plain tensor files
carry an empty metadata block. Files are written to a temporary sibling
and renamed into place.
"""
from __future__ import annotations

import logging
import os
import struct
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Mapping, Union

import numpy as np

from .errors import CheckpointError

logger = logging.getLogger(__name__)

MAGIC = b"DGTT"
VERSION = 1

PathLike = Union[str, os.PathLike]


@dataclass
class TensorFile:
    meta: Dict[str, str] = field(default_factory=dict)
    tensors: Dict[str, np.ndarray] = field(default_factory=dict)


def encode_meta(meta: Mapping[str, object]) -> str:
    lines = []
    for key, value in meta.items():
        if "=" in key or "\n" in key or "\n" in str(value):
            raise ValueError(f"metadata entry cannot be encoded: {key!r}")
        lines.append(f"{key}={value}")
    return "\n".join(lines)


def parse_meta(text: str) -> Dict[str, str]:
    meta: Dict[str, str] = {}
    for raw in text.splitlines():
        if not raw.strip():
            continue
        key, sep, value = raw.partition("=")
        if not sep:
            raise ValueError(f"bad metadata line: {raw!r}")
        meta[key.strip()] = value.strip()
    return meta


def encode_tensors(tensors: Mapping[str, np.ndarray], meta: Mapping[str, object] | None = None) -> bytes:
    meta_bytes = encode_meta(meta or {}).encode("utf-8")
    chunks = [MAGIC, struct.pack("<II", VERSION, len(meta_bytes)), meta_bytes, struct.pack("<I", len(tensors))]
    for name, value in tensors.items():
        arr = np.asarray(value)
        name_bytes = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(name_bytes)))
        chunks.append(name_bytes)
        chunks.append(struct.pack("<B", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return b"".join(chunks)


def write_tensors(path: PathLike, tensors: Mapping[str, np.ndarray], meta: Mapping[str, object] | None = None) -> Path:
    """Atomically write ``tensors`` (+ metadata) to ``path``."""
    path = Path(path)
    payload = encode_tensors(tensors, meta)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(prefix=path.name + ".", suffix=".tmp", dir=path.parent)
        try:
            with os.fdopen(fd, "wb") as fh:
                fh.write(payload)
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
    except OSError as exc:
        raise CheckpointError(f"cannot write {path}: {exc}") from exc
    logger.debug("Wrote %d tensors (%d bytes) -> %s", len(tensors), len(payload), path)
    return path


class _Reader:
    def __init__(self, buf: bytes, path: Path) -> None:
        self.buf = buf
        self.path = path
        self.offset = 0

    def take(self, n: int, what: str) -> bytes:
        end = self.offset + n
        if end > len(self.buf):
            raise CheckpointError(
                f"{self.path}: truncated at byte {self.offset} reading {what} "
                f"(need {n} bytes, {len(self.buf) - self.offset} left)"
            )
        chunk = self.buf[self.offset : end]
        self.offset = end
        return chunk

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def decode_tensors(buf: bytes, path: PathLike = "<memory>") -> TensorFile:
    reader = _Reader(buf, Path(path))
    if reader.take(4, "magic") != MAGIC:
        raise CheckpointError(f"{path}: not a DGTT tensor file (bad magic)")
    version, meta_len = reader.unpack("<II", "header")
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported DGTT version {version}")
    try:
        meta = parse_meta(reader.take(meta_len, "metadata").decode("utf-8"))
    except (UnicodeDecodeError, ValueError) as exc:
        raise CheckpointError(f"{path}: corrupt metadata block: {exc}") from exc
    (count,) = reader.unpack("<I", "tensor count")
    tensors: Dict[str, np.ndarray] = {}
    for i in range(count):
        (name_len,) = reader.unpack("<H", f"name length of tensor {i}")
        name = reader.take(name_len, f"name of tensor {i}").decode("utf-8")
        (rank,) = reader.unpack("<B", f"rank of {name}")
        dims = reader.unpack(f"<{rank}I", f"dims of {name}") if rank else ()
        n = int(np.prod(dims)) if dims else 1
        payload = reader.take(4 * n, f"payload of {name}")
        tensors[name] = np.frombuffer(payload, dtype="<f4").astype(np.float64).reshape(dims)
    if reader.offset != len(buf):
        logger.warning("%s: %d trailing bytes ignored", path, len(buf) - reader.offset)
    return TensorFile(meta=meta, tensors=tensors)


def read_tensors(path: PathLike) -> TensorFile:
    path = Path(path)
    try:
        buf = path.read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read {path}: {exc}") from exc
    return decode_tensors(buf, path)


__all__ = [
    "MAGIC",
    "VERSION",
    "TensorFile",
    "encode_meta",
    "parse_meta",
    "encode_tensors",
    "decode_tensors",
    "write_tensors",
    "read_tensors",
]
