"""Binary checkpoint files for named fp64 arrays.

Layout (all integers little-endian)::

    b"STRILCKPT"  uint32 version
    repeated, in sorted-name order:
        uint32 name_len, utf-8 name, uint32 rank, uint64 * rank shape, fp64 payload
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Mapping

import numpy as np

MAGIC = b"STRILCKPT"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


def encode_checkpoint(arrays: Mapping[str, np.ndarray]) -> bytes:
    chunks = [MAGIC, struct.pack("<I", FORMAT_VERSION)]
    for name in sorted(arrays):
        arr = np.asarray(arrays[name], dtype="<f8")
        raw = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(raw)))
        chunks.append(raw)
        chunks.append(struct.pack("<I", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        chunks.append(arr.tobytes(order="C"))
    return b"".join(chunks)


def decode_checkpoint(blob: bytes) -> dict[str, np.ndarray]:
    if not blob.startswith(MAGIC):
        raise CheckpointError("not a checkpoint file (bad magic)")
    pos = len(MAGIC)
    (version,) = struct.unpack_from("<I", blob, pos)
    pos += 4
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    out: dict[str, np.ndarray] = {}
    try:
        while pos < len(blob):
            (name_len,) = struct.unpack_from("<I", blob, pos)
            pos += 4
            name = blob[pos : pos + name_len].decode("utf-8")
            pos += name_len
            (rank,) = struct.unpack_from("<I", blob, pos)
            pos += 4
            shape = struct.unpack_from(f"<{rank}Q", blob, pos)
            pos += 8 * rank
            count = int(np.prod(shape)) if rank else 1
            nbytes = 8 * count
            if pos + nbytes > len(blob):
                raise CheckpointError(f"truncated payload for {name!r}")
            out[name] = np.frombuffer(blob, dtype="<f8", count=count, offset=pos).reshape(tuple(shape)).astype(np.float64)
            pos += nbytes
    except struct.error as exc:
        raise CheckpointError("truncated checkpoint header") from exc
    return out


def write_checkpoint(path: str | Path, arrays: Mapping[str, np.ndarray]) -> None:
    Path(path).write_bytes(encode_checkpoint(arrays))


def read_checkpoint(path: str | Path) -> dict[str, np.ndarray]:
    return decode_checkpoint(Path(path).read_bytes())
