"""Dataset ingestion and preprocessing to the [N,32,32,3] in-[0,1] contract.

Three sources are supported: big-endian IDX digit archives, one
directory per class of raster images, and JSON pen-stroke logs that get
rasterized. All of them come out as grayscale replicated to 3 identical
channels, white strokes on a black background.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass

import numpy as np
from PIL import Image

from .errors import DataError, FormatError
from .tensor import Tensor, derive_rng

IMAGE_MAGIC = 2051
LABEL_MAGIC = 2049
SIDE = 32
GLYPH_BOX = 28  # strokes are fit into this box, centered on the canvas


@dataclass
class LabeledDataset:
    images: np.ndarray  # [N,32,32,3] float32 in [0,1], channels identical
    labels: np.ndarray  # [N] int64 class indices
    class_names: dict   # class index -> display name

    def __post_init__(self):
        self.images = np.ascontiguousarray(self.images, np.float32)
        self.labels = np.asarray(self.labels, np.int64)
        if self.images.ndim != 4 or self.images.shape[1:] != (SIDE, SIDE, 3):
            raise DataError(f"images must be [N,{SIDE},{SIDE},3], got {list(self.images.shape)}")
        if len(self.images) != len(self.labels):
            raise DataError(f"{len(self.images)} images vs {len(self.labels)} labels")
        if len(self.labels) and (self.labels.min() < 0 or int(self.labels.max()) >= len(self.class_names)):
            raise DataError("label outside the class-name table")
        if len(self.images) and (self.images.min() < -0.0 or self.images.max() > 1.0):
            raise DataError("pixel values must lie in [0,1]")

    def __len__(self):
        return len(self.labels)

    @property
    def num_classes(self):
        return len(self.class_names)

    def subset(self, indices) -> "LabeledDataset":
        return LabeledDataset(self.images[indices], self.labels[indices], dict(self.class_names))


@dataclass
class StrokeSample:
    """Pen trajectory: point sequences between pen-down and pen-up.

    Coordinates follow the digitizer convention, y growing downward.
    """

    strokes: list  # list of [(x, y), ...] sequences
    label: str = ""


def _to3(gray):
    return np.repeat(gray[..., None], 3, axis=-1)


def _read_exact(f, n, what):
    b = f.read(n)
    if len(b) != n:
        raise FormatError(f"truncated file while reading {what}")
    return b


def load_idx(images_path, labels_path) -> LabeledDataset:
    """Parse big-endian IDX image/label files.

    Accepts native 28x28 images, zero-padded by 2 pixels per border up
    to 32x32, or native 32x32. Pixel bytes scale as b/255.
    """
    with open(images_path, "rb") as f:
        magic, count, rows, cols = struct.unpack(">iiii", _read_exact(f, 16, "image header"))
        if magic != IMAGE_MAGIC:
            raise FormatError(f"bad image magic 0x{magic & 0xFFFFFFFF:08x}")
        raw = _read_exact(f, count * rows * cols, "image data")
    with open(labels_path, "rb") as f:
        lmagic, lcount = struct.unpack(">ii", _read_exact(f, 8, "label header"))
        if lmagic != LABEL_MAGIC:
            raise FormatError(f"bad label magic 0x{lmagic & 0xFFFFFFFF:08x}")
        lraw = _read_exact(f, lcount, "label data")
    if count != lcount:
        raise FormatError(f"{count} images but {lcount} labels")
    imgs = np.frombuffer(raw, np.uint8).reshape(count, rows, cols).astype(np.float32) / 255.0
    if (rows, cols) == (28, 28):
        imgs = np.pad(imgs, ((0, 0), (2, 2), (2, 2)))
    elif (rows, cols) != (SIDE, SIDE):
        raise FormatError(f"unsupported image size {rows}x{cols}; expected 28x28 or 32x32")
    labels = np.frombuffer(lraw, np.uint8).astype(np.int64)
    k = int(labels.max()) + 1 if count else 0
    return LabeledDataset(_to3(imgs), labels, {i: str(i) for i in range(k)})


def _border_mean(a):
    return float(np.concatenate([a[0], a[-1], a[1:-1, 0], a[1:-1, -1]]).mean())


def load_image_dir(root, auto_invert=True) -> LabeledDataset:
    """Load a class-per-subdirectory image tree.

    Images are grayscaled, resized to 32x32 (bilinear) when needed,
    scaled to [0,1], and inverted when the border looks white so the
    character sits on a black background. Class indices follow sorted
    directory names.
    """
    classes = sorted(e for e in os.listdir(root) if os.path.isdir(os.path.join(root, e)))
    if not classes:
        raise DataError(f"no class directories under {root}")
    images, labels = [], []
    for ci, cname in enumerate(classes):
        cdir = os.path.join(root, cname)
        files = sorted(os.listdir(cdir))
        if not files:
            raise DataError(f"class directory {cdir} is empty")
        for fname in files:
            path = os.path.join(cdir, fname)
            try:
                with Image.open(path) as im:
                    im = im.convert("L")
                    if im.size != (SIDE, SIDE):
                        im = im.resize((SIDE, SIDE), Image.BILINEAR)
                    a = np.asarray(im, np.float32) / 255.0
            except (OSError, ValueError) as exc:
                raise DataError(f"unreadable image {path}: {exc}") from exc
            if auto_invert and _border_mean(a) > 0.5:
                a = 1.0 - a
            images.append(_to3(a))
            labels.append(ci)
    return LabeledDataset(np.stack(images), np.asarray(labels), dict(enumerate(classes)))


def _draw_line(canvas, x0, y0, x1, y1):
    # integer Bresenham, 1-pixel pen
    dx = abs(x1 - x0)
    dy = -abs(y1 - y0)
    sx = 1 if x0 < x1 else -1
    sy = 1 if y0 < y1 else -1
    err = dx + dy
    while True:
        canvas[y0, x0] = 1.0
        if x0 == x1 and y0 == y1:
            return
        e2 = 2 * err
        if e2 >= dy:
            err += dy
            x0 += sx
        if e2 <= dx:
            err += dx
            y0 += sy


def rasterize_strokes(sample: StrokeSample) -> Tensor:
    """Draw a stroke sample onto a black 32x32 canvas (3 channels).

    Points are scaled uniformly (aspect preserved) so the larger span
    fills a centered 28-pixel box; consecutive points are joined by
    1-pixel lines at intensity 1.0, single-point strokes become dots.
    The output is invariant to global translation and uniform scaling
    of the input coordinates.
    """
    strokes = sample.strokes
    if not strokes or any(len(s) == 0 for s in strokes):
        raise DataError("stroke sample has no points")
    pts = np.array([p for s in strokes for p in s], np.float64)
    if pts.ndim != 2 or pts.shape[1] != 2 or not np.isfinite(pts).all():
        raise DataError("stroke points must be finite (x, y) pairs")
    lo = pts.min(axis=0)
    hi = pts.max(axis=0)
    span = float(max(hi[0] - lo[0], hi[1] - lo[1]))
    scale = (GLYPH_BOX - 1) / span if span > 0 else 0.0
    extent = (hi - lo) * scale
    off = (SIDE - 1 - extent) / 2.0
    canvas = np.zeros((SIDE, SIDE), np.float32)
    for stroke in strokes:
        px = [
            (int(np.rint((x - lo[0]) * scale + off[0])), int(np.rint((y - lo[1]) * scale + off[1])))
            for x, y in stroke
        ]
        if len(px) == 1:
            x, y = px[0]
            canvas[y, x] = 1.0
        for (x0, y0), (x1, y1) in zip(px, px[1:]):
            _draw_line(canvas, x0, y0, x1, y1)
    return Tensor(_to3(canvas))


def load_stroke_dir(root) -> LabeledDataset:
    """Read one JSON stroke sample per file under root.

    Document shape: {"label": str, "strokes": [[[x, y], ...], ...]}.
    Class indices follow sorted label names.
    """
    files = sorted(f for f in os.listdir(root) if f.endswith(".json"))
    if not files:
        raise DataError(f"no .json stroke files under {root}")
    samples = []
    for fname in files:
        path = os.path.join(root, fname)
        try:
            with open(path) as f:
                doc = json.load(f)
            strokes = [[(float(x), float(y)) for x, y in s] for s in doc["strokes"]]
            samples.append(StrokeSample(strokes=strokes, label=str(doc["label"])))
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise DataError(f"bad stroke log {path}: {exc}") from exc
    names = sorted({s.label for s in samples})
    index = {n: i for i, n in enumerate(names)}
    images = np.stack([rasterize_strokes(s).data for s in samples])
    labels = np.asarray([index[s.label] for s in samples])
    return LabeledDataset(images, labels, {i: n for n, i in index.items()})


def split_dataset(d: LabeledDataset, ratio, seed):
    """Per-class stratified shuffle split into (train, test).

    round(ratio * n) samples of each class go to the train side, clamped
    so both sides keep at least one sample of every class. Deterministic
    given the seed; the two sides partition the dataset exactly.
    """
    if not 0.0 < ratio < 1.0:
        raise ValueError(f"split ratio must be inside (0,1), got {ratio}")
    rng = derive_rng(seed, "split")
    train_idx, test_idx = [], []
    for c in range(d.num_classes):
        idx = np.flatnonzero(d.labels == c)
        if len(idx) < 2:
            raise DataError(f"class {d.class_names.get(c, c)!r} has {len(idx)} sample(s); need at least 2")
        rng.shuffle(idx)
        n_train = min(max(int(round(ratio * len(idx))), 1), len(idx) - 1)
        train_idx.extend(idx[:n_train])
        test_idx.extend(idx[n_train:])
    return d.subset(np.sort(train_idx)), d.subset(np.sort(test_idx))
