"""Binary container for named float32 tensors.

Layout (all integers unsigned 32-bit little-endian):

    magic "MTHM" | format version | tensor count
    per tensor: name length | UTF-8 name | rank | dims... | float32 LE data

Used for model checkpoints and on-disk feature files alike. Writes are
deterministic: tensors are stored in the order given.
"""

from __future__ import annotations

import struct

import numpy as np

MAGIC = b"MTHM"
FORMAT_VERSION = 1


class ContainerError(ValueError):
    """Malformed or unsupported container file."""


def write_tensors(path, tensors: dict) -> None:
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", FORMAT_VERSION, len(tensors)))
        for name, arr in tensors.items():
            arr = np.asarray(arr)
            if arr.dtype != np.float32:
                arr = arr.astype(np.float32)
            raw = name.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<I", arr.ndim))
            for dim in arr.shape:
                fh.write(struct.pack("<I", dim))
            fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def read_tensors(path) -> dict:
    with open(path, "rb") as fh:
        if fh.read(4) != MAGIC:
            raise ContainerError(f"{path}: bad magic, not a tensor container")
        version, count = struct.unpack("<II", fh.read(8))
        if version != FORMAT_VERSION:
            raise ContainerError(f"{path}: unsupported format version {version}")
        tensors = {}
        for _ in range(count):
            (name_len,) = struct.unpack("<I", fh.read(4))
            name = fh.read(name_len).decode("utf-8")
            (rank,) = struct.unpack("<I", fh.read(4))
            dims = struct.unpack(f"<{rank}I", fh.read(4 * rank)) if rank else ()
            size = int(np.prod(dims)) if rank else 1
            data = np.frombuffer(fh.read(4 * size), dtype="<f4")
            if data.size != size:
                raise ContainerError(f"{path}: truncated data for tensor {name!r}")
            tensors[name] = data.reshape(dims).astype(np.float32)
        return tensors
