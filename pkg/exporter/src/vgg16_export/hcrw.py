"""Writer for the HCRW v1 archive format.

Layout (little-endian): magic "HCRW", u32 version = 1, u32 entry count;
per entry u32 name length, UTF-8 name, u32 ndim, ndim x u32 dims, then
the raw 32-bit IEEE-754 float data.
"""

import struct

import numpy as np

MAGIC = b"HCRW"
VERSION = 1


def serialize(entries) -> bytes:
    """entries: iterable of (name, float32 ndarray), order preserved."""
    out = [MAGIC, struct.pack("<II", VERSION, len(entries))]
    for name, arr in entries:
        arr = np.ascontiguousarray(arr, np.float32)
        nb = name.encode("utf-8")
        out.append(struct.pack("<I", len(nb)))
        out.append(nb)
        out.append(struct.pack("<I", arr.ndim))
        out.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        out.append(arr.astype("<f4", copy=False).tobytes())
    return b"".join(out)


def write(entries, path):
    with open(path, "wb") as f:
        f.write(serialize(entries))
