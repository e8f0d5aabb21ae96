"""Binary serialization of named float64 tensors.

Layout: magic "DSOW", u32 format version, u32 tensor count; per tensor a
u16 name length + UTF-8 name, u8 rank, u32 per dimension, then the values
as little-endian float64. Integers are little-endian. Save and load round
trip bit-identically.
"""

import struct

import numpy as np

from .errors import FileFormatError

MAGIC = b"DSOW"
VERSION = 1


def save_weights(path, tensors):
    """Write a name -> array mapping; iteration order is preserved."""
    chunks = [MAGIC, struct.pack("<II", VERSION, len(tensors))]
    for name, arr in tensors.items():
        arr = np.asarray(arr, dtype=np.float64)
        encoded = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<B", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(arr.astype("<f8").tobytes())
    with open(path, "wb") as f:
        f.write(b"".join(chunks))


def load_weights(path):
    """Read a weights file back into an ordered name -> array dict."""
    try:
        with open(path, "rb") as f:
            blob = f.read()
    except OSError as e:
        raise FileFormatError(f"{path}: {e}") from e
    view = memoryview(blob)
    pos = 0

    def take(n, what):
        nonlocal pos
        if pos + n > len(view):
            raise FileFormatError(f"{path}: truncated while reading {what}")
        out = view[pos : pos + n]
        pos += n
        return out

    if bytes(take(4, "magic")) != MAGIC:
        raise FileFormatError(f"{path}: bad magic, not a weights file")
    version, count = struct.unpack("<II", take(8, "header"))
    if version != VERSION:
        raise FileFormatError(f"{path}: unsupported format version {version}")
    tensors = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<H", take(2, "name length"))
        name = bytes(take(name_len, "name")).decode("utf-8")
        (rank,) = struct.unpack("<B", take(1, "rank"))
        dims = struct.unpack(f"<{rank}I", take(4 * rank, "dims"))
        size = 1
        for d in dims:
            size *= d
        data = np.frombuffer(take(8 * size, f"tensor {name!r}"), dtype="<f8")
        tensors[name] = data.reshape(dims).astype(np.float64)
    if pos != len(view):
        raise FileFormatError(f"{path}: {len(view) - pos} trailing bytes after last tensor")
    return tensors
