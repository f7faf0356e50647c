"""Binary weight archives: full checkpoints and the pretrained conv import.

Archive format (little-endian): magic "HCRW", u32 version = 1, u32 entry
count; per entry u32 name length, UTF-8 name bytes, u32 ndim, ndim x u32
dims, then raw 32-bit IEEE-754 floats. Weight layout for conv kernels is
[kh, kw, Cin, Cout]; whoever produces an archive transposes into that.
"""

from __future__ import annotations

import struct

import numpy as np

from .errors import FormatError
from .network import CONV_PLAN, NetworkGraph, set_phase

MAGIC = b"HCRW"
VERSION = 1


class WeightArchive:
    """Ordered name -> float32 array container with unique names."""

    def __init__(self):
        self.entries = {}

    def add(self, name, array):
        if name in self.entries:
            raise FormatError(f"duplicate archive entry {name!r}")
        arr = np.ascontiguousarray(array, np.float32)
        if arr.ndim == 0:
            arr = arr.reshape(1)
        if not arr.flags.writeable:
            arr = arr.copy()
        self.entries[str(name)] = arr

    def __len__(self):
        return len(self.entries)

    def __contains__(self, name):
        return name in self.entries

    def __getitem__(self, name):
        try:
            return self.entries[name]
        except KeyError:
            raise FormatError(f"archive entry {name!r} is missing") from None

    def names(self):
        return list(self.entries)


def write_archive(a: WeightArchive, path):
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<II", VERSION, len(a.entries)))
        for name, arr in a.entries.items():
            nb = name.encode("utf-8")
            f.write(struct.pack("<I", len(nb)))
            f.write(nb)
            f.write(struct.pack("<I", arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            f.write(arr.astype("<f4", copy=False).tobytes())


def read_archive(path) -> WeightArchive:
    """Bit-exact inverse of write_archive; rejects malformed files."""
    with open(path, "rb") as f:
        data = f.read()
    off = 0

    def take(n, what):
        nonlocal off
        if off + n > len(data):
            raise FormatError(f"truncated archive while reading {what}")
        chunk = data[off:off + n]
        off += n
        return chunk

    if take(4, "magic") != MAGIC:
        raise FormatError("bad archive magic")
    version, count = struct.unpack("<II", take(8, "header"))
    if version != VERSION:
        raise FormatError(f"unsupported archive version {version}")
    a = WeightArchive()
    for i in range(count):
        (nlen,) = struct.unpack("<I", take(4, f"entry {i} name length"))
        name = take(nlen, f"entry {i} name").decode("utf-8")
        (ndim,) = struct.unpack("<I", take(4, f"{name!r} rank"))
        dims = struct.unpack(f"<{ndim}I", take(4 * ndim, f"{name!r} dims")) if ndim else ()
        if ndim < 1 or any(d < 1 for d in dims):
            raise FormatError(f"{name!r}: bad shape {list(dims)}")
        n_elems = 1
        for d in dims:
            n_elems *= d
        raw = take(4 * n_elems, f"{name!r} data")
        a.add(name, np.frombuffer(raw, "<f4").reshape(dims))
    if off != len(data):
        raise FormatError(f"{len(data) - off} trailing bytes after the last entry")
    return a


def save_checkpoint(g: NetworkGraph) -> WeightArchive:
    """Snapshot every graph tensor, moving statistics included."""
    a = WeightArchive()
    for name, tensor, _ in g.named_parameters():
        a.add(name, tensor.data)
    return a


def load_checkpoint(g: NetworkGraph, a: WeightArchive) -> NetworkGraph:
    """Install a complete snapshot; the entry set must match the graph exactly."""
    expected = {name: t for name, t, _ in g.named_parameters()}
    missing = sorted(n for n in expected if n not in a.entries)
    extra = sorted(n for n in a.entries if n not in expected)
    if missing or extra:
        raise FormatError(
            f"checkpoint does not match the graph (missing {missing[:3]}, unexpected {extra[:3]})"
        )
    for name, tensor in expected.items():
        arr = a.entries[name]
        if list(arr.shape) != tensor.shape:
            raise FormatError(f"{name}: checkpoint shape {list(arr.shape)} vs graph {tensor.shape}")
    for name, tensor in expected.items():
        tensor.data[...] = a.entries[name]
    return g


def init_from_pretrained(g: NetworkGraph, a: WeightArchive) -> NetworkGraph:
    """Copy the nine pretrained conv layers into the graph, reset to phase1.

    Exactly the 18 conv weight/bias tensors are touched; every other
    tensor keeps its fresh initialization.
    """
    staged = []
    for name, cin, cout in CONV_PLAN:
        for suffix, shape in (("weight", [3, 3, cin, cout]), ("bias", [cout])):
            entry = f"{name}.{suffix}"
            if entry not in a:
                raise FormatError(f"pretrained archive is missing {entry}")
            arr = a[entry]
            if list(arr.shape) != shape:
                raise FormatError(f"{entry}: archive shape {list(arr.shape)} vs expected {shape}")
            staged.append((name, suffix, arr))
    for name, suffix, arr in staged:
        p = g.layer(name)
        target = p.weights if suffix == "weight" else p.bias
        target.data[...] = arr
    return set_phase(g, "phase1")
