"""Training objective: BCE on the change map plus per-branch feature-consistency MSE."""
from __future__ import annotations

from dataclasses import dataclass

from . import tensor as T
from .tensor import ShapeError, Tensor

BCE_EPS = 1e-7


@dataclass(frozen=True)
class LossWeights:
    bce: float = 0.8
    mse_1: float = 0.1
    mse_2: float = 0.1

    def __post_init__(self):
        if min(self.bce, self.mse_1, self.mse_2) < 0:
            raise ValueError(f"loss weights must be non-negative: {self}")


def bce_loss(pred: Tensor, target) -> Tensor:
    target = target if isinstance(target, Tensor) else Tensor(target)
    if pred.shape != target.shape:
        raise ShapeError(f"bce shape mismatch: {pred.shape} vs {target.shape}")
    p = T.clamp(pred, BCE_EPS, 1.0 - BCE_EPS)
    y = target.data
    terms = T.mul(T.log(p), y) + T.mul(T.log(1.0 - p), 1.0 - y)
    return T.scale(T.reduce_mean(terms), -1.0)


def mse_loss(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"mse shape mismatch: {a.shape} vs {b.shape}")
    diff = a - b
    return T.reduce_mean(T.mul(diff, diff))


def total_loss(bce: Tensor, mse_1: Tensor, mse_2: Tensor, w: LossWeights) -> Tensor:
    return T.scale(bce, w.bce) + T.scale(mse_1, w.mse_1) + T.scale(mse_2, w.mse_2)
