"""Dice + focal training losses on probability maps."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import ShapeError, Tensor, as_tensor, clamp, log, sigmoid, sum_

FOCAL_CLAMP = 1e-7


@dataclass(frozen=True)
class LossConfig:
    epsilon: float = 1.0  # precision/recall trade-off weight on the positive term
    psi: float = 2.0  # focusing exponent
    smooth: float = 1e-5

    def __post_init__(self):
        if self.psi < 0:
            raise ValueError("psi must be non-negative")
        if self.smooth <= 0:
            raise ValueError("smooth must be positive")


def _pair(pred, target) -> tuple[Tensor, Tensor]:
    pred, target = as_tensor(pred), as_tensor(target)
    if pred.shape != target.shape:
        raise ShapeError(f"prediction shape {pred.shape} differs from target shape {target.shape}")
    return pred, target


def dice_loss(pred, target, smooth: float = 1e-5) -> Tensor:
    """``1 - (2 sum(p*y) + s) / (sum(p^2) + sum(y^2) + s)``."""
    pred, target = _pair(pred, target)
    inter = sum_(pred * target)
    denom = sum_(pred * pred) + float(np.sum(target.data * target.data))
    # same value as 1 - ratio, without the cancellation near zero loss
    return (denom - 2.0 * inter) / (denom + smooth)


def focal_loss(pred, target, cfg: LossConfig = LossConfig()) -> Tensor:
    """Summed binary focal loss; probabilities are clamped to ``[1e-7, 1 - 1e-7]``."""
    pred, target = _pair(pred, target)
    p = clamp(pred, FOCAL_CLAMP, 1.0 - FOCAL_CLAMP)
    y = target.data
    pos = cfg.epsilon * y * (1.0 - p) ** cfg.psi * log(p)
    neg = (1.0 - y) * p ** cfg.psi * log(1.0 - p)
    return -sum_(pos + neg)


def combined_loss(logits, target, cfg: LossConfig = LossConfig()) -> Tensor:
    probs = sigmoid(logits)
    return dice_loss(probs, target, cfg.smooth) + focal_loss(probs, target, cfg)
