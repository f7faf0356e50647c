"""Synthetic handwritten-digit corpus rendered from stroke skeletons.

Each digit 0..9 has a fixed polyline skeleton on the unit square
(y growing downward). Samples jitter the skeleton with a small random
rotation, per-axis scaling, and per-point noise, then rasterize through
the standard stroke renderer. The result is a self-contained stand-in
for a scanned-digit corpus: cheap to generate, learnable, and varied
enough that accuracy is not trivially 100%.
"""

from __future__ import annotations

import os
import struct

import numpy as np

from .data import IMAGE_MAGIC, LABEL_MAGIC, LabeledDataset, StrokeSample, rasterize_strokes
from .errors import DataError
from .tensor import derive_rng, derive_seed


def _loop(cx, cy, rx, ry, n=14, start=0.0):
    # closed polygon approximating an ellipse
    t = np.linspace(start, start + 2 * np.pi, n + 1)
    return list(zip(cx + rx * np.sin(t), cy - ry * np.cos(t)))


DIGIT_STROKES = {
    0: [_loop(0.5, 0.5, 0.3, 0.45)],
    1: [[(0.35, 0.22), (0.55, 0.05), (0.55, 0.95)]],
    2: [[(0.22, 0.28), (0.32, 0.1), (0.55, 0.05), (0.75, 0.15), (0.78, 0.32),
         (0.6, 0.55), (0.22, 0.95), (0.8, 0.95)]],
    3: [[(0.25, 0.12), (0.5, 0.05), (0.75, 0.15), (0.75, 0.33), (0.5, 0.47),
         (0.78, 0.62), (0.78, 0.82), (0.55, 0.95), (0.25, 0.88)]],
    4: [[(0.68, 0.05), (0.2, 0.62), (0.85, 0.62)], [(0.68, 0.05), (0.68, 0.95)]],
    5: [[(0.75, 0.05), (0.28, 0.05), (0.24, 0.45), (0.55, 0.4), (0.78, 0.55),
         (0.78, 0.78), (0.55, 0.95), (0.25, 0.87)]],
    6: [[(0.68, 0.05), (0.42, 0.25), (0.28, 0.55), (0.3, 0.8), (0.5, 0.95),
         (0.7, 0.85), (0.74, 0.65), (0.55, 0.52), (0.32, 0.62)]],
    7: [[(0.2, 0.05), (0.8, 0.05), (0.42, 0.95)]],
    8: [_loop(0.5, 0.28, 0.22, 0.22), _loop(0.5, 0.72, 0.27, 0.26)],
    9: [_loop(0.5, 0.28, 0.24, 0.23), [(0.74, 0.32), (0.66, 0.95)]],
}


def make_sample(digit, rng) -> StrokeSample:
    """One jittered stroke sample for a digit.

    Jitter: rotation within 8 degrees, independent axis scales in
    [0.9, 1.1], then gaussian point noise (sigma 0.012 of the box).
    """
    rng = derive_rng(rng) if isinstance(rng, int) else rng
    theta = np.deg2rad(rng.uniform(-8.0, 8.0))
    sx = rng.uniform(0.9, 1.1)
    sy = rng.uniform(0.9, 1.1)
    cos, sin = np.cos(theta), np.sin(theta)
    out = []
    for stroke in DIGIT_STROKES[int(digit)]:
        pts = np.asarray(stroke, np.float64) - 0.5
        pts *= (sx, sy)
        pts = pts @ np.array([[cos, sin], [-sin, cos]])
        pts += rng.normal(0.0, 0.012, pts.shape)
        out.append([(float(x), float(y)) for x, y in pts + 0.5])
    return StrokeSample(strokes=out, label=str(int(digit)))


def make_dataset(n, seed=0) -> LabeledDataset:
    """n samples cycling through digits 0..9, deterministically seeded."""
    if n < 1:
        raise ValueError("need at least one sample")
    images = np.empty((n, 32, 32, 3), np.float32)
    labels = np.empty(n, np.int64)
    for i in range(n):
        digit = i % 10
        sample = make_sample(digit, derive_rng(seed, i))
        images[i] = rasterize_strokes(sample).data
        labels[i] = digit
    return LabeledDataset(images, labels, {d: str(d) for d in range(10)})


def write_idx(dataset: LabeledDataset, images_path, labels_path, size=28):
    """Serialize a dataset to big-endian IDX image/label files.

    size 28 crops the two-pixel canvas margin (glyphs are confined to
    the centered 28-pixel box, so the crop is lossless); size 32 keeps
    the full canvas. Pixels quantize to uint8 via round(v * 255).
    """
    if size not in (28, 32):
        raise ValueError("size must be 28 or 32")
    gray = np.rint(dataset.images[:, :, :, 0] * 255.0).astype(np.uint8)
    if size == 28:
        if gray[:, :2].any() or gray[:, 30:].any() or gray[:, :, :2].any() or gray[:, :, 30:].any():
            raise DataError("canvas margin is not empty, refusing a lossy 28x28 crop")
        gray = gray[:, 2:30, 2:30]
    with open(images_path, "wb") as f:
        f.write(struct.pack(">iiii", IMAGE_MAGIC, len(dataset), size, size))
        f.write(gray.tobytes())
    with open(labels_path, "wb") as f:
        f.write(struct.pack(">ii", LABEL_MAGIC, len(dataset)))
        f.write(dataset.labels.astype(np.uint8).tobytes())


def make_idx_corpus(root, n_train, n_test, seed=0):
    """Write a train/test IDX file quartet under root; returns the paths."""
    os.makedirs(root, exist_ok=True)
    paths = {
        "train_images": os.path.join(root, "train-images-idx3-ubyte"),
        "train_labels": os.path.join(root, "train-labels-idx1-ubyte"),
        "test_images": os.path.join(root, "t10k-images-idx3-ubyte"),
        "test_labels": os.path.join(root, "t10k-labels-idx1-ubyte"),
    }
    write_idx(make_dataset(n_train, derive_seed(seed, "train")), paths["train_images"], paths["train_labels"])
    write_idx(make_dataset(n_test, derive_seed(seed, "test")), paths["test_images"], paths["test_labels"])
    return paths
