"""Random affine augmentation: rotation, shift, shear, zoom, composed per image.

Transforms are inverse maps (output pixel to source coordinate) applied
with bilinear sampling and zero fill, so characters stay on their black
background. Reflections are never produced: zoom factors are drawn
strictly positive and rotations stay within the configured magnitude.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .tensor import Tensor, derive_rng

SIDE = 32


@dataclass
class AugmentConfig:
    rotation_deg: float = 10.0
    shift_frac: float = 0.05
    shear: float = 0.05
    zoom_frac: float = 0.05
    enabled: bool = False

    def __post_init__(self):
        if min(self.rotation_deg, self.shift_frac, self.shear, self.zoom_frac) < 0:
            raise ValueError("augmentation magnitudes must be non-negative")


@dataclass
class AffineTransform:
    """2x3 matrix sending output pixel coordinates (x, y) to source coordinates."""

    matrix: np.ndarray


def _translation(tx, ty):
    return np.array([[1.0, 0.0, tx], [0.0, 1.0, ty], [0.0, 0.0, 1.0]])


def sample_affine(cfg: AugmentConfig, rng) -> AffineTransform:
    """Draw one transform about the image center.

    rotation ~ U(-r, r) degrees, shifts ~ U(-s, s) * 32 pixels per axis,
    shear ~ U(-h, h) with source-x = x + shear * (y - cy), and zoom
    ~ U(1-z, 1+z) per axis. All-zero magnitudes compose to the exact
    identity matrix.
    """
    if not isinstance(rng, np.random.Generator):
        rng = derive_rng(rng)
    theta = math.radians(rng.uniform(-cfg.rotation_deg, cfg.rotation_deg))
    tx = rng.uniform(-cfg.shift_frac, cfg.shift_frac) * SIDE
    ty = rng.uniform(-cfg.shift_frac, cfg.shift_frac) * SIDE
    shear = rng.uniform(-cfg.shear, cfg.shear)
    zx = rng.uniform(1.0 - cfg.zoom_frac, 1.0 + cfg.zoom_frac)
    zy = rng.uniform(1.0 - cfg.zoom_frac, 1.0 + cfg.zoom_frac)
    c = (SIDE - 1) / 2.0
    rot = np.array([
        [math.cos(theta), -math.sin(theta), 0.0],
        [math.sin(theta), math.cos(theta), 0.0],
        [0.0, 0.0, 1.0],
    ])
    shear_m = np.array([[1.0, shear, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
    zoom = np.diag([zx, zy, 1.0])
    m = _translation(c, c) @ rot @ _translation(tx, ty) @ shear_m @ zoom @ _translation(-c, -c)
    return AffineTransform(matrix=m[:2])


def apply_affine(img, t: AffineTransform) -> Tensor:
    """Bilinear resampling of an [H,W,C] image; out-of-range samples are black.

    An exact identity matrix degenerates to a bit-exact copy, and outputs
    stay inside the input's [0,1] range (convex weights, zero fill).
    """
    a = img.data if isinstance(img, Tensor) else np.asarray(img, np.float32)
    h, w = a.shape[0], a.shape[1]
    ys, xs = np.mgrid[0:h, 0:w]
    m = t.matrix
    sx = m[0, 0] * xs + m[0, 1] * ys + m[0, 2]
    sy = m[1, 0] * xs + m[1, 1] * ys + m[1, 2]
    x0 = np.floor(sx).astype(np.int64)
    y0 = np.floor(sy).astype(np.int64)
    fx = sx - x0
    fy = sy - y0
    out = np.zeros(a.shape, np.float64)
    for dy in (0, 1):
        for dx in (0, 1):
            xi = x0 + dx
            yi = y0 + dy
            weight = (fx if dx else 1.0 - fx) * (fy if dy else 1.0 - fy)
            valid = (xi >= 0) & (xi < w) & (yi >= 0) & (yi < h)
            vals = a[np.clip(yi, 0, h - 1), np.clip(xi, 0, w - 1)]
            out += (weight * valid)[..., None] * vals
    return Tensor(out.astype(np.float32))


def augment_batch(batch, cfg: AugmentConfig, epoch_seed) -> Tensor:
    """Independently transform each image; (epoch_seed, index) fixes the draw."""
    ba = batch.data if isinstance(batch, Tensor) else np.asarray(batch, np.float32)
    out = np.empty_like(ba)
    for i in range(ba.shape[0]):
        t = sample_affine(cfg, derive_rng(epoch_seed, i))
        out[i] = apply_affine(ba[i], t).data
    return Tensor(out)
