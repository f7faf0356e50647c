"""Dense float tensors and the small numeric kernel every layer builds on.

The main storage type is 32-bit float, contiguous, row-major. 64-bit
tensors are permitted so gradient checks can run finite differences at
a trustworthy precision; nothing else should use them.
"""

from __future__ import annotations

import math
import zlib

import numpy as np

from .errors import NumericError, ShapeError

__all__ = [
    "Tensor",
    "create",
    "derive_rng",
    "derive_seed",
    "elementwise",
    "glorot_uniform",
    "matmul",
    "reshape",
]


def _seed_seq(seed, tags):
    entropy = [int(seed) & 0xFFFFFFFF]
    for tag in tags:
        if isinstance(tag, str):
            entropy.append(zlib.crc32(tag.encode("utf-8")))
        else:
            entropy.append(int(tag) & 0xFFFFFFFF)
    return np.random.SeedSequence(entropy)


def derive_rng(seed, *tags) -> np.random.Generator:
    """Deterministic child generator for (seed, *tags).

    String tags are folded in with crc32 so call sites can label their
    streams (a layer name, an epoch index) without coordinating integer
    ids across modules. The underlying PCG64 stream is stable across
    platforms and process restarts.
    """
    return np.random.Generator(np.random.PCG64(_seed_seq(seed, tags)))


def derive_seed(seed, *tags) -> int:
    """Single integer usable as the root of another derived stream."""
    return int(_seed_seq(seed, tags).generate_state(1)[0])


class Tensor:
    """Contiguous n-d float array, 1 to 4 dimensions.

    Wrapping an ndarray that is already contiguous and float32/float64
    aliases it instead of copying; tensors are treated as immutable
    except through the explicit in-place parameter-update entry points.
    """

    __slots__ = ("data",)

    def __init__(self, data, dtype=None):
        if dtype is None:
            if isinstance(data, np.ndarray) and data.dtype in (np.float32, np.float64):
                dtype = data.dtype
            else:
                dtype = np.float32
        dtype = np.dtype(dtype)
        if dtype not in (np.dtype(np.float32), np.dtype(np.float64)):
            raise ValueError(f"tensors hold float32 or float64, not {dtype}")
        arr = np.ascontiguousarray(data, dtype=dtype)
        if arr.ndim == 0:
            arr = arr.reshape(1)
        if not 1 <= arr.ndim <= 4:
            raise ShapeError(f"rank {arr.ndim} is outside the supported 1..4 range")
        if min(arr.shape) < 1:
            raise ShapeError(f"zero-length dimension in shape {list(arr.shape)}")
        if not np.isfinite(arr).all():
            raise NumericError("tensor contains NaN or Inf")
        self.data = arr

    @property
    def shape(self):
        return list(self.data.shape)

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return int(self.data.size)

    @property
    def dtype(self):
        return self.data.dtype

    def astype(self, dtype):
        return Tensor(self.data.astype(dtype))

    def copy(self):
        return Tensor(self.data.copy())

    def reshape(self, shape):
        return reshape(self, shape)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype.name})"


def _check_shape(shape):
    shape = [int(d) for d in shape]
    if not 1 <= len(shape) <= 4:
        raise ShapeError(f"rank {len(shape)} is outside the supported 1..4 range")
    if any(d < 1 for d in shape):
        raise ShapeError(f"zero or negative dimension in shape {shape}")
    return shape


def create(shape, fill) -> Tensor:
    """Allocate a float32 tensor of the given shape.

    fill is one of: "zeros", ("constant", c), ("uniform", lo, hi, seed),
    ("glorot", seed). Seeded fills are bit-reproducible.
    """
    shape = _check_shape(shape)
    kind = fill if isinstance(fill, str) else fill[0]
    if kind == "zeros":
        return Tensor(np.zeros(shape, np.float32))
    if kind == "constant":
        return Tensor(np.full(shape, float(fill[1]), np.float32))
    if kind == "uniform":
        lo, hi, seed = fill[1], fill[2], fill[3]
        return Tensor(derive_rng(seed).uniform(lo, hi, shape).astype(np.float32))
    if kind in ("glorot", "glorot-uniform"):
        return glorot_uniform(shape, fill[1])
    raise ValueError(f"unknown fill rule {fill!r}")


def _fans(shape):
    if len(shape) == 1:
        return shape[0], shape[0]
    if len(shape) == 2:
        return shape[0], shape[1]
    receptive = 1
    for d in shape[:-2]:
        receptive *= d
    return shape[-2] * receptive, shape[-1] * receptive


def glorot_uniform(shape, rng) -> Tensor:
    """U(-limit, limit) with limit = sqrt(6 / (fan_in + fan_out))."""
    shape = _check_shape(shape)
    if not isinstance(rng, np.random.Generator):
        rng = derive_rng(rng)
    fan_in, fan_out = _fans(shape)
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return Tensor(rng.uniform(-limit, limit, shape).astype(np.float32))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul needs rank-2 operands, got ranks {a.ndim} and {b.ndim}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"inner dimensions differ: {a.shape} x {b.shape}")
    return Tensor(a.data @ b.data)


_OPS = {
    "add": np.add,
    "sub": np.subtract,
    "mul": np.multiply,
    "div": np.divide,
    "max": np.maximum,
}


def elementwise(kind, a: Tensor, b) -> Tensor:
    """Pointwise op between a tensor and a same-shape tensor or a scalar."""
    if kind not in _OPS:
        raise ValueError(f"unknown elementwise op {kind!r}")
    if isinstance(b, Tensor):
        if a.shape != b.shape:
            raise ShapeError(f"shape mismatch: {a.shape} vs {b.shape}")
        bd = b.data
    else:
        bd = float(b)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = _OPS[kind](a.data, bd)
    try:
        return Tensor(out)
    except NumericError:
        raise NumericError(f"elementwise {kind} produced non-finite values") from None


def reshape(t: Tensor, shape) -> Tensor:
    shape = _check_shape(shape)
    if math.prod(shape) != t.size:
        raise ShapeError(f"cannot reshape {t.size} elements into {shape}")
    return Tensor(t.data.reshape(shape))
