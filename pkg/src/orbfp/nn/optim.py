"""Adam optimiser."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ParameterError
from .tensor import Tensor


@dataclass
class AdamState:
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: AdamState,
    lr: float = 1e-3,
    betas: tuple[float, float] = (0.9, 0.999),
    eps: float = 1e-7,
) -> AdamState:
    """One bias-corrected Adam update, in place on ``params``; returns the new state."""
    b1, b2 = betas
    t = state.t + 1
    m_new, v_new = {}, {}
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p)
        if g.shape != p.shape:
            raise ParameterError(f"{name}: gradient shape {g.shape} != parameter shape {p.shape}")
        m = state.m.get(name, np.zeros_like(p))
        v = state.v.get(name, np.zeros_like(p))
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        m_hat = m / (1 - b1**t)
        v_hat = v / (1 - b2**t)
        p -= (lr * m_hat / (np.sqrt(v_hat) + eps)).astype(p.dtype, copy=False)
        m_new[name], v_new[name] = m.astype(p.dtype, copy=False), v.astype(p.dtype, copy=False)
    return AdamState(t, m_new, v_new)


class Adam:
    def __init__(self, params: dict[str, Tensor], lr: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-7):
        self.params = params
        self.lr = lr
        self.betas = tuple(betas)
        self.eps = eps
        self.state = AdamState()

    def step(self) -> None:
        data = {k: p.data for k, p in self.params.items()}
        grads = {k: p.grad for k, p in self.params.items() if p.grad is not None}
        self.state = adam_step(data, grads, self.state, self.lr, self.betas, self.eps)
