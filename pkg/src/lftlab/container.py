"""Bit-exact named-tensor checkpoint container.

Layout (all integers little-endian): magic ``LFTR``, format version u16,
tensor count u32; then per tensor: name length u16, UTF-8 name, rank u8,
each dimension as u32, and the elements as little-endian 32-bit floats in
row-major order.  Values are stored at 32-bit precision regardless of the
in-memory precision; round-trips are bitwise identities for f32 stores.
"""

from __future__ import annotations

import os
import struct

import numpy as np

from .errors import CheckpointError

MAGIC = b"LFTR"
VERSION = 1


def write_tensors(path: str, tensors: dict[str, np.ndarray]) -> None:
    """Write name -> array pairs in insertion order (atomic rename)."""
    tmp = f"{path}.tmp~"
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<HI", VERSION, len(tensors)))
        for name, arr in tensors.items():
            data = np.ascontiguousarray(arr, dtype="<f4")
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<B", data.ndim))
            for dim in data.shape:
                fh.write(struct.pack("<I", dim))
            fh.write(data.tobytes())
    os.replace(tmp, path)


def read_tensors(path: str) -> dict[str, np.ndarray]:
    """Read a container back into an ordered name -> float32 array map."""
    with open(path, "rb") as fh:
        blob = fh.read()

    def take(n: int, what: str) -> bytes:
        nonlocal offset
        if offset + n > len(blob):
            raise CheckpointError(f"truncated checkpoint {path!r} while reading {what}")
        chunk = blob[offset:offset + n]
        offset += n
        return chunk

    offset = 0
    if take(4, "magic") != MAGIC:
        raise CheckpointError(f"{path!r} is not a checkpoint container (bad magic)")
    version, count = struct.unpack("<HI", take(6, "header"))
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version} in {path!r}")
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<H", take(2, "name length"))
        name = take(name_len, "name").decode("utf-8")
        (rank,) = struct.unpack("<B", take(1, f"rank of {name}"))
        dims = tuple(struct.unpack("<I", take(4, f"dims of {name}"))[0] for _ in range(rank))
        n_elems = 1
        for dim in dims:
            n_elems *= dim
        raw = take(4 * n_elems, f"data of {name}")
        if name in out:
            raise CheckpointError(f"duplicate tensor {name!r} in {path!r}")
        out[name] = np.frombuffer(raw, dtype="<f4").reshape(dims).copy()
    if offset != len(blob):
        raise CheckpointError(f"trailing bytes after last tensor in {path!r}")
    return out


def validate_names(found, expected, path: str) -> None:
    """Require the exact expected tensor-name set, naming offenders."""
    found = set(found)
    expected = set(expected)
    unknown = sorted(found - expected)
    missing = sorted(expected - found)
    if unknown:
        raise CheckpointError(f"unknown tensor {unknown[0]!r} in {path!r}"
                              + (f" (+{len(unknown) - 1} more)" if len(unknown) > 1 else ""))
    if missing:
        raise CheckpointError(f"missing tensor {missing[0]!r} in {path!r}"
                              + (f" (+{len(missing) - 1} more)" if len(missing) > 1 else ""))
