"""AdamW with decoupled weight decay, cosine schedule."""

from __future__ import annotations

import math

import numpy as np

from .numerics import Tensor


def cosine_lr(step: int, total_steps: int, base_lr: float) -> float:
    if total_steps <= 0:
        raise ValueError("total_steps must be positive")
    if not 0 <= step <= total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps}]")
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * step / total_steps))


def adamw_step(
    param: np.ndarray,
    grad: np.ndarray,
    m: np.ndarray,
    v: np.ndarray,
    t: int,
    lr: float,
    weight_decay: float = 1e-3,
    betas: tuple[float, float] = (0.9, 0.999),
    eps: float = 1e-8,
) -> None:
    """One in-place update; ``t`` is the 1-based step count."""
    if not (param.shape == grad.shape == m.shape == v.shape):
        raise ValueError(f"shape mismatch: {param.shape}, {grad.shape}, {m.shape}, {v.shape}")
    b1, b2 = betas
    param *= 1.0 - lr * weight_decay
    m *= b1
    m += (1.0 - b1) * grad
    v *= b2
    v += (1.0 - b2) * grad * grad
    m_hat = m / (1.0 - b1**t)
    v_hat = v / (1.0 - b2**t)
    param -= lr * m_hat / (np.sqrt(v_hat) + eps)


class AdamW:
    """Per-parameter moments keyed by name. Parameters whose gradient is
    ``None`` for a step are left untouched, decay included."""

    def __init__(self, params: dict[str, Tensor], weight_decay: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = params
        self.weight_decay = weight_decay
        self.betas = tuple(betas)
        self.eps = eps
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.t = {k: 0 for k in params}

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def step(self, lr: float) -> None:
        for name, p in self.params.items():
            if p.grad is None:
                continue
            self.t[name] += 1
            adamw_step(p.data, p.grad, self.m[name], self.v[name], self.t[name], lr, self.weight_decay, self.betas, self.eps)
