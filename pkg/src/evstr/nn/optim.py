"""SGD with momentum and the cosine learning-rate schedule."""

from __future__ import annotations

import math

import numpy as np

from .module import Parameter


def cosine_lr(epoch: int, total_epochs: int, lr_max: float, lr_min: float) -> float:
    """lr(e) = lr_min + (lr_max - lr_min) (1 + cos(pi e / E)) / 2."""
    if not 0 <= epoch <= total_epochs:
        raise ValueError(f"epoch {epoch} outside [0, {total_epochs}]")
    return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + math.cos(math.pi * epoch / total_epochs))


class SGD:
    """v <- mu v - lr g; w <- w + v."""

    def __init__(self, params: list[Parameter], lr: float, momentum: float = 0.0):
        self.params = list(params)
        self.lr = lr
        self.momentum = momentum
        self.velocity = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self):
        for p, v in zip(self.params, self.velocity):
            if p.grad is None:
                continue
            v *= self.momentum
            v -= self.lr * p.grad
            p.data += v.astype(p.data.dtype, copy=False)
