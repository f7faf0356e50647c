"""Forward and backward kernels for the eight layer kinds in the graph.

Every forward returns (output, cache); the cache holds whatever that
layer's backward needs and is only valid for the immediately preceding
forward call on the same layer. Kernels compute in the dtype of their
inputs, so the float64 gradient-check path runs through the same code.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ShapeError
from .tensor import Tensor, derive_rng

KINDS = ("conv2d", "maxpool2d", "batchnorm", "flatten", "dense", "dropout", "relu", "softmax")

BN_EPSILON = 1e-5
BN_MOMENTUM = 0.99

# (serialized suffix, LayerParams attribute, participates in gradient updates)
# Moving statistics never take gradients regardless of the trainable flag.
PARAM_FIELDS = (
    ("weight", "weights", True),
    ("bias", "bias", True),
    ("gamma", "bn_gamma", True),
    ("beta", "bn_beta", True),
    ("moving_mean", "bn_moving_mean", False),
    ("moving_variance", "bn_moving_variance", False),
)


@dataclass
class LayerParams:
    """Parameters and flags for one layer instance."""

    kind: str
    weights: Optional[Tensor] = None
    bias: Optional[Tensor] = None
    bn_gamma: Optional[Tensor] = None
    bn_beta: Optional[Tensor] = None
    bn_moving_mean: Optional[Tensor] = None
    bn_moving_variance: Optional[Tensor] = None
    dropout_rate: float = 0.0
    trainable: bool = True

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")


def parameter_tensors(p: LayerParams):
    """Yield (suffix, tensor, gradient-updatable) for the populated fields."""
    for suffix, attr, updatable in PARAM_FIELDS:
        t = getattr(p, attr)
        if t is not None:
            yield suffix, t, updatable and p.trainable


def _arr(x):
    return x.data if isinstance(x, Tensor) else np.asarray(x)


def _im2col(x):
    n, h, w, c = x.shape
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
    win = np.lib.stride_tricks.sliding_window_view(xp, (3, 3), axis=(1, 2))
    # win is [n, h, w, c, 3, 3]; reorder patches to (kh, kw, c) to match
    # the [3, 3, cin, cout] kernel reshape
    return win.transpose(0, 1, 2, 4, 5, 3).reshape(n * h * w, 9 * c)


def _col2im(cols, x_shape):
    n, h, w, c = x_shape
    g = cols.reshape(n, h, w, 3, 3, c)
    out = np.zeros((n, h + 2, w + 2, c), dtype=cols.dtype)
    for i in range(3):
        for j in range(3):
            out[:, i:i + h, j:j + w, :] += g[:, :, :, i, j, :]
    return out[:, 1:h + 1, 1:w + 1, :]


def conv2d_forward(x, p: LayerParams):
    """3x3 convolution, stride 1, zero padding that preserves H and W.

    Lowered to a single matmul over unrolled input patches; the direct
    nested-loop definition is what the tests hold this against.
    """
    xa = _arr(x)
    w = p.weights.data
    if xa.ndim != 4:
        raise ShapeError(f"conv2d expects [N,H,W,C] input, got shape {list(xa.shape)}")
    if w.ndim != 4 or w.shape[0] != 3 or w.shape[1] != 3:
        raise ShapeError(f"conv2d kernels are [3,3,Cin,Cout], got {list(w.shape)}")
    n, h, wd, cin = xa.shape
    if cin != w.shape[2]:
        raise ShapeError(f"input has {cin} channels but the kernel expects {w.shape[2]}")
    cout = w.shape[3]
    cols = _im2col(xa)
    y = (cols @ w.reshape(9 * cin, cout) + p.bias.data).reshape(n, h, wd, cout)
    return Tensor(y), {"cols": cols, "x_shape": xa.shape}


def conv2d_backward(grad_out, cache, p: LayerParams):
    g = _arr(grad_out)
    n, h, wd, cin = cache["x_shape"]
    w = p.weights.data
    cout = w.shape[3]
    if g.shape != (n, h, wd, cout):
        raise ShapeError(f"grad shape {list(g.shape)} does not match output {[n, h, wd, cout]}")
    g2 = g.reshape(n * h * wd, cout)
    cols = cache["cols"]
    grad_b = g2.sum(axis=0)
    grad_w = (cols.T @ g2).reshape(3, 3, cin, cout)
    grad_x = _col2im(g2 @ w.reshape(9 * cin, cout).T, cache["x_shape"])
    return Tensor(grad_x), Tensor(grad_w), Tensor(grad_b)


def maxpool_forward(x):
    """2x2 max pooling, stride 2; ties resolve to the first window slot."""
    xa = _arr(x)
    if xa.ndim != 4:
        raise ShapeError(f"maxpool expects [N,H,W,C] input, got shape {list(xa.shape)}")
    n, h, w, c = xa.shape
    if h % 2 or w % 2:
        raise ShapeError(f"pooling needs even spatial dims, got {h}x{w}")
    win = (
        xa.reshape(n, h // 2, 2, w // 2, 2, c)
        .transpose(0, 1, 3, 2, 4, 5)
        .reshape(n, h // 2, w // 2, 4, c)
    )
    idx = win.argmax(axis=3)
    y = np.take_along_axis(win, idx[:, :, :, None, :], axis=3)[:, :, :, 0, :]
    return Tensor(y), {"idx": idx, "x_shape": xa.shape}


def maxpool_backward(grad_out, cache):
    g = _arr(grad_out)
    n, h, w, c = cache["x_shape"]
    idx = cache["idx"]
    if g.shape != idx.shape:
        raise ShapeError(f"grad shape {list(g.shape)} does not match pooled shape {list(idx.shape)}")
    buf = np.zeros((n, h // 2, w // 2, 4, c), dtype=g.dtype)
    np.put_along_axis(buf, idx[:, :, :, None, :], g[:, :, :, None, :], axis=3)
    gx = (
        buf.reshape(n, h // 2, w // 2, 2, 2, c)
        .transpose(0, 1, 3, 2, 4, 5)
        .reshape(n, h, w, c)
    )
    return Tensor(gx)


def batchnorm_forward(x, p: LayerParams, mode, momentum=BN_MOMENTUM, epsilon=BN_EPSILON):
    """Normalize over every axis except the last; per-channel scale/shift.

    Train mode uses batch statistics (biased variance) and advances the
    moving averages in place; infer mode reads the moving statistics and
    mutates nothing.
    """
    xa = _arr(x)
    gamma = p.bn_gamma.data
    beta = p.bn_beta.data
    if xa.shape[-1] != gamma.shape[0]:
        raise ShapeError(f"batchnorm has {gamma.shape[0]} channels, input has {xa.shape[-1]}")
    axes = tuple(range(xa.ndim - 1))
    if mode == "train":
        mean = xa.mean(axis=axes)
        var = xa.var(axis=axes)
        inv = 1.0 / np.sqrt(var + epsilon)
        xhat = (xa - mean) * inv
        mm = p.bn_moving_mean.data
        mv = p.bn_moving_variance.data
        mm *= momentum
        mm += (1.0 - momentum) * mean
        mv *= momentum
        mv += (1.0 - momentum) * var
        m = xa.size // xa.shape[-1]
        cache = {"xhat": xhat, "inv": inv, "gamma": gamma, "m": m, "axes": axes}
        return Tensor(gamma * xhat + beta), cache
    if mode != "infer":
        raise ValueError(f"mode must be 'train' or 'infer', got {mode!r}")
    inv = 1.0 / np.sqrt(p.bn_moving_variance.data + epsilon)
    y = gamma * (xa - p.bn_moving_mean.data) * inv + beta
    return Tensor(y), {"mode": "infer"}


def batchnorm_backward(grad_out, cache, p: LayerParams):
    if cache.get("mode") == "infer":
        raise ValueError("batchnorm backward needs a train-mode cache")
    g = _arr(grad_out)
    xhat, inv, gamma, m, axes = (
        cache["xhat"], cache["inv"], cache["gamma"], cache["m"], cache["axes"],
    )
    if g.shape != xhat.shape:
        raise ShapeError(f"grad shape {list(g.shape)} does not match input {list(xhat.shape)}")
    dgamma = (g * xhat).sum(axis=axes)
    dbeta = g.sum(axis=axes)
    dxhat = g * gamma
    dx = (inv / m) * (m * dxhat - dxhat.sum(axis=axes) - xhat * (dxhat * xhat).sum(axis=axes))
    return Tensor(dx), Tensor(dgamma), Tensor(dbeta)


def dense_forward(x, p: LayerParams):
    xa = _arr(x)
    w = p.weights.data
    if xa.ndim != 2 or w.ndim != 2 or xa.shape[1] != w.shape[0]:
        raise ShapeError(f"dense expects [N,{w.shape[0]}] input, got {list(xa.shape)}")
    return Tensor(xa @ w + p.bias.data), {"x": xa}


def dense_backward(grad_out, cache, p: LayerParams):
    g = _arr(grad_out)
    xa = cache["x"]
    w = p.weights.data
    if g.shape != (xa.shape[0], w.shape[1]):
        raise ShapeError(f"grad shape {list(g.shape)} does not match output [{xa.shape[0]},{w.shape[1]}]")
    return Tensor(g @ w.T), Tensor(xa.T @ g), Tensor(g.sum(axis=0))


def flatten_forward(x):
    xa = _arr(x)
    return Tensor(xa.reshape(xa.shape[0], -1)), {"x_shape": xa.shape}


def flatten_backward(grad_out, cache):
    return Tensor(_arr(grad_out).reshape(cache["x_shape"]))


def dropout_forward(x, rate, mode, rng=0):
    """Inverted dropout: train mode zeroes with probability rate and
    scales survivors by 1/(1-rate), so inference is the identity."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0,1), got {rate}")
    xa = _arr(x)
    if mode not in ("train", "infer"):
        raise ValueError(f"mode must be 'train' or 'infer', got {mode!r}")
    if mode == "infer" or rate == 0.0:
        return Tensor(xa), {"mask": None}
    if not isinstance(rng, np.random.Generator):
        rng = derive_rng(rng)
    keep = rng.random(xa.shape) >= rate
    mask = keep.astype(xa.dtype) * xa.dtype.type(1.0 / (1.0 - rate))
    return Tensor(xa * mask), {"mask": mask}


def dropout_backward(grad_out, cache):
    g = _arr(grad_out)
    if cache["mask"] is None:
        return Tensor(g)
    return Tensor(g * cache["mask"])


def relu_forward(x):
    xa = _arr(x)
    return Tensor(np.maximum(xa, 0)), {"pos": xa > 0}


def relu_backward(grad_out, cache):
    return Tensor(_arr(grad_out) * cache["pos"])


def relu(x) -> Tensor:
    return relu_forward(x)[0]


def softmax(x) -> Tensor:
    """Row-wise softmax with max subtraction for overflow safety."""
    xa = _arr(x)
    if xa.ndim != 2:
        raise ShapeError(f"softmax expects [N,K] input, got shape {list(xa.shape)}")
    e = np.exp(xa - xa.max(axis=1, keepdims=True))
    return Tensor(e / e.sum(axis=1, keepdims=True))


def layer_backward(kind, grad_out, cache, p: LayerParams = None):
    """Route grad_out through one layer's backward.

    Returns (grad_in, {suffix: grad}) where the suffixes follow
    PARAM_FIELDS naming. The softmax gradient is fused with the loss
    (see optim.cross_entropy) and is deliberately not available here.
    """
    if kind == "conv2d":
        gx, gw, gb = conv2d_backward(grad_out, cache, p)
        return gx, {"weight": gw, "bias": gb}
    if kind == "dense":
        gx, gw, gb = dense_backward(grad_out, cache, p)
        return gx, {"weight": gw, "bias": gb}
    if kind == "batchnorm":
        gx, gg, gb = batchnorm_backward(grad_out, cache, p)
        return gx, {"gamma": gg, "beta": gb}
    if kind == "maxpool2d":
        return maxpool_backward(grad_out, cache), {}
    if kind == "flatten":
        return flatten_backward(grad_out, cache), {}
    if kind == "dropout":
        return dropout_backward(grad_out, cache), {}
    if kind == "relu":
        return relu_backward(grad_out, cache), {}
    if kind == "softmax":
        raise ValueError("softmax backward is fused with the loss; see optim.cross_entropy")
    raise ValueError(f"unknown layer kind {kind!r}")
