"""AdamW with decoupled weight decay and a warm-restart cosine schedule."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .tensor import ShapeError, Tensor


@dataclass
class AdamWState:
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


def adamw_step(params: list[np.ndarray], grads: list[np.ndarray], state: AdamWState, lr_t: float,
               weight_decay: float = 1e-5, betas=(0.9, 0.999), eps: float = 1e-8) -> None:
    """In-place update ``theta <- theta*(1 - lr*wd) - lr * m_hat / (sqrt(v_hat) + eps)``."""
    if len(params) != len(grads):
        raise ShapeError(f"{len(params)} parameters but {len(grads)} gradients")
    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    b1, b2 = betas
    state.step += 1
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape or p.shape != m.shape:
            raise ShapeError(f"parameter {p.shape} / gradient {g.shape} / moment {m.shape} mismatch")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        if weight_decay:
            p *= 1.0 - lr_t * weight_decay
        p -= lr_t * (m / c1) / (np.sqrt(v / c2) + eps)


class AdamW:
    def __init__(self, params: list[Tensor], weight_decay: float = 1e-5, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = list(params)
        self.weight_decay, self.betas, self.eps = weight_decay, betas, eps
        self.state = AdamWState()

    def step(self, lr_t: float) -> None:
        grads = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in self.params]
        adamw_step([p.data for p in self.params], grads, self.state, lr_t, self.weight_decay, self.betas, self.eps)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None


def cosine_lr(t: float, lr: float = 1e-3, eta_min: float = 1e-5, t0: float = 25, restarts: bool = True) -> float:
    """Cosine annealing from ``lr`` to ``eta_min`` over ``t0`` epochs.

    At an exact multiple of ``t0`` (t > 0) the value is the end-of-cycle
    minimum; the restart to ``lr`` takes effect on the following epoch. With
    ``restarts=False`` the schedule stays at ``eta_min`` after ``t0``.
    """
    if t < 0:
        raise ValueError("epoch must be non-negative")
    if not restarts:
        tc = min(t, t0)
    elif t > 0 and t % t0 == 0:
        tc = t0
    else:
        tc = t % t0
    return eta_min + 0.5 * (lr - eta_min) * (1.0 + math.cos(math.pi * tc / t0))
