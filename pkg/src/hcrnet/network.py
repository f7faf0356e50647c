"""The 32x32x3 character-classifier graph: assembly, phase flags, forward.

The architecture is a fixed nine-conv feature extractor (the slice that
can be initialized from pretrained weights) followed by a batchnormed
two-layer dense head with dropout and a softmax output. Phase1 freezes
the conv prefix; phase2 makes everything gradient-updatable except the
batchnorm moving statistics, which never take gradients.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import layers as L
from .errors import ShapeError
from .tensor import Tensor, derive_rng, glorot_uniform

# (name, in-channels, out-channels); pooling follows the last conv of
# blocks 1..3, block 4 keeps its 4x4 resolution.
CONV_PLAN = (
    ("block1_conv1", 3, 64),
    ("block1_conv2", 64, 64),
    ("block2_conv1", 64, 128),
    ("block2_conv2", 128, 128),
    ("block3_conv1", 128, 256),
    ("block3_conv2", 256, 256),
    ("block3_conv3", 256, 256),
    ("block4_conv1", 256, 512),
    ("block4_conv2", 512, 512),
)
FROZEN_LAYERS = tuple(name for name, _, _ in CONV_PLAN)
_POOL_AFTER = {
    "block1_conv2": "block1_pool",
    "block2_conv2": "block2_pool",
    "block3_conv3": "block3_pool",
}

INPUT_SHAPE = (32, 32, 3)
DENSE_UNITS = 512
DROPOUT_RATE = 0.35
FLAT_FEATURES = 4 * 4 * 512


@dataclass
class NetworkGraph:
    """Ordered (name, LayerParams) list plus phase bookkeeping."""

    layers: list
    num_classes: int
    phase: str = "phase1"

    def layer(self, name) -> L.LayerParams:
        for n, p in self.layers:
            if n == name:
                return p
        raise KeyError(name)

    def named_parameters(self):
        """Yield (name, tensor, gradient-updatable) across the graph."""
        for lname, p in self.layers:
            for suffix, t, updatable in L.parameter_tensors(p):
                yield f"{lname}.{suffix}", t, updatable


def build_hcrnet(num_classes: int, seed=0) -> NetworkGraph:
    """Assemble the graph with fresh glorot weights and phase1 flags."""
    if num_classes < 2:
        raise ValueError(f"need at least 2 classes, got {num_classes}")
    layers = []

    def conv(name, cin, cout):
        layers.append((name, L.LayerParams(
            kind="conv2d",
            weights=glorot_uniform([3, 3, cin, cout], derive_rng(seed, name, "weight")),
            bias=Tensor(np.zeros(cout, np.float32)),
        )))
        layers.append((name + "_relu", L.LayerParams(kind="relu")))

    def batchnorm(name, channels):
        layers.append((name, L.LayerParams(
            kind="batchnorm",
            bn_gamma=Tensor(np.ones(channels, np.float32)),
            bn_beta=Tensor(np.zeros(channels, np.float32)),
            bn_moving_mean=Tensor(np.zeros(channels, np.float32)),
            bn_moving_variance=Tensor(np.ones(channels, np.float32)),
        )))

    def dense(name, din, dout):
        layers.append((name, L.LayerParams(
            kind="dense",
            weights=glorot_uniform([din, dout], derive_rng(seed, name, "weight")),
            bias=Tensor(np.zeros(dout, np.float32)),
        )))

    for name, cin, cout in CONV_PLAN:
        conv(name, cin, cout)
        if name in _POOL_AFTER:
            layers.append((_POOL_AFTER[name], L.LayerParams(kind="maxpool2d")))
    batchnorm("batch_normalization", 512)
    layers.append(("flatten", L.LayerParams(kind="flatten")))
    dense("dense", FLAT_FEATURES, DENSE_UNITS)
    layers.append(("dense_relu", L.LayerParams(kind="relu")))
    batchnorm("batch_normalization_1", DENSE_UNITS)
    layers.append(("dropout", L.LayerParams(kind="dropout", dropout_rate=DROPOUT_RATE)))
    dense("dense_1", DENSE_UNITS, DENSE_UNITS)
    layers.append(("dense_1_relu", L.LayerParams(kind="relu")))
    batchnorm("batch_normalization_2", DENSE_UNITS)
    layers.append(("dropout_1", L.LayerParams(kind="dropout", dropout_rate=DROPOUT_RATE)))
    dense("dense_2", DENSE_UNITS, num_classes)
    layers.append(("softmax", L.LayerParams(kind="softmax")))
    return set_phase(NetworkGraph(layers=layers, num_classes=num_classes), "phase1")


def set_phase(g: NetworkGraph, phase) -> NetworkGraph:
    """Flip trainable flags: phase1 freezes the conv prefix, phase2 frees it.

    Weights are untouched; toggling back restores the original flags.
    """
    if phase not in ("phase1", "phase2"):
        raise ValueError(f"unknown phase {phase!r}")
    frozen = set(FROZEN_LAYERS)
    for name, p in g.layers:
        p.trainable = phase == "phase2" if name in frozen else True
    g.phase = phase
    return g


def param_count(g: NetworkGraph):
    """(total, trainable, non-trainable) from shapes and current flags."""
    total = trainable = 0
    for _, tensor, updatable in g.named_parameters():
        total += tensor.size
        if updatable:
            trainable += tensor.size
    return total, trainable, total - trainable


def layer_param_table(g: NetworkGraph):
    """Per-layer parameter counts for parameterized layers, in graph order."""
    rows = []
    for name, p in g.layers:
        count = sum(t.size for _, t, _ in L.parameter_tensors(p))
        if count:
            rows.append((name, count))
    return rows


def frozen_boundary(g: NetworkGraph) -> int:
    """Index of the first layer after the freezable conv prefix."""
    last = FROZEN_LAYERS[-1] + "_relu"
    for i, (name, _) in enumerate(g.layers):
        if name == last:
            return i + 1
    raise KeyError(last)


def run_segment(g: NetworkGraph, x, start, stop, mode="infer", seed=0, collect=False):
    """Run layers[start:stop] on x.

    Returns (activation, caches); caches is None unless collect is set,
    otherwise a list of (name, kind, cache) aligned with the segment.
    """
    if mode not in ("train", "infer"):
        raise ValueError(f"mode must be 'train' or 'infer', got {mode!r}")
    a = x.data if isinstance(x, Tensor) else np.asarray(x, np.float32)
    caches = [] if collect else None
    for name, p in g.layers[start:stop]:
        kind = p.kind
        if kind == "conv2d":
            out, cache = L.conv2d_forward(a, p)
        elif kind == "relu":
            out, cache = L.relu_forward(a)
        elif kind == "maxpool2d":
            out, cache = L.maxpool_forward(a)
        elif kind == "batchnorm":
            out, cache = L.batchnorm_forward(a, p, mode)
        elif kind == "flatten":
            out, cache = L.flatten_forward(a)
        elif kind == "dense":
            out, cache = L.dense_forward(a, p)
        elif kind == "dropout":
            out, cache = L.dropout_forward(a, p.dropout_rate, mode, derive_rng(seed, name))
        else:
            out, cache = L.softmax(a), None
        a = out.data
        if collect:
            caches.append((name, kind, cache))
    return Tensor(a), caches


def forward(g: NetworkGraph, batch, mode="infer", seed=0):
    """Full forward pass; probabilities per row sum to 1.

    Caches come back only in train mode; infer mode is a pure function
    of (weights, input).
    """
    xa = batch.data if isinstance(batch, Tensor) else np.asarray(batch, np.float32)
    if xa.ndim != 4 or tuple(xa.shape[1:]) != INPUT_SHAPE:
        raise ShapeError(f"expected [N,32,32,3] input, got {list(xa.shape)}")
    return run_segment(g, xa, 0, len(g.layers), mode, seed, collect=(mode == "train"))


def predict(g: NetworkGraph, batch):
    """Argmax class per row; exact ties resolve to the lowest index."""
    probs, _ = forward(g, batch, mode="infer")
    return [int(i) for i in np.argmax(probs.data, axis=1)]


def backward(g: NetworkGraph, caches, grad_logits, stop=0):
    """Walk caches in reverse, accumulating parameter gradients.

    grad_logits is the loss gradient at the softmax input (the fused
    softmax/cross-entropy form), so the softmax entry is skipped. No
    gradient flows into cache positions below stop; phase1 uses that to
    avoid computing conv gradients it would never apply.
    """
    grads = {}
    grad = grad_logits.data if isinstance(grad_logits, Tensor) else np.asarray(grad_logits)
    by_name = dict(g.layers)
    for pos in range(len(caches) - 1, stop - 1, -1):
        name, kind, cache = caches[pos]
        if kind == "softmax":
            continue
        gin, pgrads = L.layer_backward(kind, grad, cache, by_name[name])
        for suffix, t in pgrads.items():
            grads[f"{name}.{suffix}"] = t
        grad = gin.data
    return grads
