"""Loss, RMSprop updates, and the piecewise-constant epoch schedules."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, ShapeError
from .tensor import Tensor

RMSPROP_RHO = 0.9
RMSPROP_EPSILON = 1e-7
LOG_FLOOR = 1e-12

PHASE1_BREAKPOINTS = ((0, 1e-4), (5, 5e-5))


def cross_entropy(probs, labels):
    """Mean negative log-likelihood and the fused gradient at the logits.

    probs must already be softmax output. Probabilities are clamped to
    1e-12 before the log. The returned gradient is (probs - onehot) / N,
    the loss gradient with respect to the softmax input, so the backward
    walk starts below the softmax layer.
    """
    pa = probs.data if isinstance(probs, Tensor) else np.asarray(probs)
    labels = np.asarray(labels, dtype=np.int64)
    if pa.ndim != 2:
        raise ShapeError(f"expected [N,K] probabilities, got shape {list(pa.shape)}")
    n, k = pa.shape
    if labels.shape != (n,):
        raise ShapeError(f"expected {n} labels, got shape {list(labels.shape)}")
    if len(labels) and (labels.min() < 0 or labels.max() >= k):
        raise DataError(f"label outside [0,{k}): saw {int(labels.min())}..{int(labels.max())}")
    rows = np.arange(n)
    loss = float(-np.log(np.maximum(pa[rows, labels], LOG_FLOOR)).mean())
    grad = pa.copy()
    grad[rows, labels] -= 1.0
    grad /= n
    return loss, Tensor(grad)


@dataclass
class RmspropState:
    """Per-parameter squared-gradient accumulators, created lazily."""

    rho: float = RMSPROP_RHO
    epsilon: float = RMSPROP_EPSILON
    acc: dict = field(default_factory=dict)


def rmsprop_step(params, grads, state: RmspropState, lr):
    """One update: acc = rho*acc + (1-rho)*g^2; p -= lr*g/(sqrt(acc)+eps).

    params maps name -> (tensor, updatable); parameters that are not
    updatable stay bit-identical even when a gradient is supplied.
    """
    for name, grad in grads.items():
        if name not in params:
            raise KeyError(f"gradient for unknown parameter {name!r}")
        tensor, updatable = params[name]
        if not updatable:
            continue
        ga = grad.data if isinstance(grad, Tensor) else np.asarray(grad)
        pa = tensor.data
        if ga.shape != pa.shape:
            raise ShapeError(f"{name}: gradient shape {list(ga.shape)} vs parameter {list(pa.shape)}")
        acc = state.acc.get(name)
        if acc is None:
            acc = state.acc[name] = np.zeros_like(pa)
        acc *= state.rho
        acc += (1.0 - state.rho) * ga * ga
        pa -= lr * ga / (np.sqrt(acc) + state.epsilon)


@dataclass
class StaircaseSchedule:
    """Epoch-indexed piecewise-constant learning rate."""

    breakpoints: list  # (start-epoch, rate), strictly increasing, first at 0
    total_epochs: int

    def __post_init__(self):
        bps = [(int(e), float(r)) for e, r in self.breakpoints]
        if not bps or bps[0][0] != 0:
            raise ValueError("the first breakpoint must start at epoch 0")
        for (e0, _), (e1, _) in zip(bps, bps[1:]):
            if e1 <= e0:
                raise ValueError("breakpoint epochs must strictly increase")
        if any(r <= 0 for _, r in bps):
            raise ValueError("learning rates must be positive")
        if self.total_epochs < 1:
            raise ValueError("total_epochs must be at least 1")
        self.breakpoints = bps


def lr_at(s: StaircaseSchedule, epoch: int) -> float:
    """Rate of the last breakpoint at or before epoch (right-continuous)."""
    if not 0 <= epoch < s.total_epochs:
        raise ValueError(f"epoch {epoch} outside [0,{s.total_epochs})")
    rate = s.breakpoints[0][1]
    for start, r in s.breakpoints:
        if start <= epoch:
            rate = r
    return rate


def default_schedules(phase, total_epochs) -> StaircaseSchedule:
    """Stock schedules: phase1 drops 1e-4 to 5e-5 at epoch 5; phase2 walks
    1e-7, then 5e-6 from epoch 5, then 1e-6 over the last five epochs."""
    if phase == "phase1":
        return StaircaseSchedule(list(PHASE1_BREAKPOINTS), total_epochs)
    if phase == "phase2":
        if total_epochs < 11:
            raise ValueError(f"the phase2 schedule needs at least 11 epochs, got {total_epochs}")
        return StaircaseSchedule([(0, 1e-7), (5, 5e-6), (total_epochs - 5, 1e-6)], total_epochs)
    raise ValueError(f"unknown phase {phase!r}")
