"""AdamW with decoupled weight decay."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from .tensor import DimensionError, Tensor

__all__ = ["AdamWState", "adamw_step", "AdamW"]


@dataclass
class AdamWState:
    m: List[np.ndarray] = field(default_factory=list)
    v: List[np.ndarray] = field(default_factory=list)
    t: int = 0

    @classmethod
    def zeros_like(cls, params: Sequence[np.ndarray]) -> "AdamWState":
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params], 0)


def adamw_step(params: Sequence[np.ndarray], grads: Sequence[Optional[np.ndarray]], state: AdamWState,
               lr: float, wd: float, beta1: float = 0.9, beta2: float = 0.999,
               eps: float = 1e-8) -> None:
    """Update ``params`` in place.

    Decay is applied first (``p -= lr * wd * p``), then the bias-corrected Adam
    step. A ``None`` gradient is treated as zero.
    """
    if len(params) != len(grads) or len(params) != len(state.m) or len(params) != len(state.v):
        raise DimensionError("adamw_step", "params", len(params), (len(grads), len(state.m), len(state.v)))
    state.t += 1
    t = state.t
    bc1 = 1.0 - beta1 ** t
    bc2 = 1.0 - beta2 ** t
    for i, (p, g) in enumerate(zip(params, grads)):
        m, v = state.m[i], state.v[i]
        if m.shape != p.shape or v.shape != p.shape:
            raise DimensionError("adamw_step", f"param[{i}]", p.shape, m.shape)
        if g is None:
            g = np.zeros_like(p)
        elif g.shape != p.shape:
            raise DimensionError("adamw_step", f"grad[{i}]", p.shape, g.shape)
        if wd:
            p -= (lr * wd) * p
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        p -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)


class AdamW:
    """Stateful wrapper over :func:`adamw_step` for a fixed list of parameter tensors."""

    def __init__(self, params: Sequence[Tensor], lr: float = 1e-4, weight_decay: float = 1e-4,
                 betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.weight_decay = weight_decay
        self.betas = tuple(betas)
        self.eps = eps
        self.state = AdamWState.zeros_like([p.data for p in self.params])

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        adamw_step([p.data for p in self.params], [p.grad for p in self.params], self.state,
                   self.lr, self.weight_decay, self.betas[0], self.betas[1], self.eps)
