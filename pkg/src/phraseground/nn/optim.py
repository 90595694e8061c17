"""Adam optimizer and gradient clipping over a ParamStore."""

from __future__ import annotations

import math

import numpy as np

from ..errors import StateError
from .layers import ParamStore


def clip_grad_norm(store: ParamStore, max_norm: float) -> float:
    """Scale all gradients so their global L2 norm is at most max_norm."""
    total = 0.0
    for p in store:
        if p.tensor.grad is not None:
            total += float((p.tensor.grad.astype(np.float64) ** 2).sum())
    norm = math.sqrt(total)
    if norm > max_norm:
        scale = max_norm / (norm + 1e-12)
        for p in store:
            if p.tensor.grad is not None:
                p.tensor.grad *= np.asarray(scale, dtype=p.tensor.grad.dtype)
    return norm


def adam_step(
    store: ParamStore,
    lr: float,
    betas: tuple[float, float] = (0.9, 0.999),
    eps: float = 1e-8,
) -> None:
    """One Adam update over every parameter; gradients are zeroed afterwards."""
    b1, b2 = betas
    for p in store:
        g = p.tensor.grad
        if g is None:
            raise StateError(f"parameter {p.name} has no gradient buffer")
        p.step += 1
        p.m = b1 * p.m + (1.0 - b1) * g
        p.v = b2 * p.v + (1.0 - b2) * g * g
        m_hat = p.m / (1.0 - b1 ** p.step)
        v_hat = p.v / (1.0 - b2 ** p.step)
        p.tensor.data -= (lr * m_hat / (np.sqrt(v_hat) + eps)).astype(
            p.tensor.data.dtype
        )
        p.tensor.grad = np.zeros_like(p.tensor.data)
