"""AdamW with decoupled weight decay and a clamped cosine learning-rate schedule."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .tensor import ParamTensor, ShapeError


@dataclass
class AdamWState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 1e-2
    step: int = 0
    moments: dict[str, tuple[np.ndarray, np.ndarray]] = field(default_factory=dict)


def adamw_step(params: Sequence[ParamTensor], grads: Mapping, state: AdamWState) -> AdamWState:
    """One in-place AdamW update of ``params``.

    ``grads`` maps each parameter (or its name) to its gradient; missing
    entries count as zero gradients.
    """
    state.step += 1
    t = state.step
    b1, b2, lr = state.beta1, state.beta2, state.lr
    bc1 = 1.0 - b1 ** t
    bc2 = 1.0 - b2 ** t
    for p in params:
        g = grads.get(p)
        if g is None:
            g = grads.get(p.name)
        if g is None:
            g = np.zeros_like(p.data)
        if g.shape != p.shape:
            raise ShapeError(f"gradient for {p.name} has shape {g.shape}, parameter has {p.shape}")
        m, v = state.moments.get(p.name) or (np.zeros_like(p.data), np.zeros_like(p.data))
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * (g * g)
        state.moments[p.name] = (m, v)
        p.state["exp_avg"], p.state["exp_avg_sq"] = m, v
        data = p.data
        if state.weight_decay:
            data = data * (1.0 - lr * state.weight_decay)
        update = (m / bc1) / (np.sqrt(v / bc2) + state.eps)
        p.data = (data - lr * update).astype(p.dtype, copy=False)
    return state


@dataclass(frozen=True)
class CosineSchedule:
    eta_max: float = 1e-3
    eta_min: float = 1e-5
    t_max: int = 50
    restarts: bool = False

    def __post_init__(self):
        if self.t_max <= 0:
            raise ValueError("t_max must be positive")
        if self.eta_min > self.eta_max:
            raise ValueError("eta_min must not exceed eta_max")


def lr_at(sched: CosineSchedule, epoch: int) -> float:
    """Cosine annealing from eta_max to eta_min over t_max epochs.

    Past t_max the rate stays at eta_min, or with ``restarts`` the cosine
    repeats with period t_max.
    """
    if epoch < 0:
        raise ValueError("epoch must be non-negative")
    if epoch >= sched.t_max:
        if not sched.restarts:
            return sched.eta_min
        epoch %= sched.t_max
    if epoch == 0:
        return sched.eta_max
    cos = math.cos(math.pi * epoch / sched.t_max)
    return sched.eta_min + (sched.eta_max - sched.eta_min) * (1.0 + cos) / 2.0
