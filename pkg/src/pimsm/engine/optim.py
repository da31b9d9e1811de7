"""AdamW with global-norm clipping and a warmup + cosine learning-rate schedule."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor


@dataclass
class CosineWarmup:
    peak_lr: float
    warmup_steps: int
    total_steps: int
    min_lr: float = 0.0

    def __call__(self, step: int) -> float:
        if self.warmup_steps > 0 and step < self.warmup_steps:
            return self.peak_lr * step / self.warmup_steps
        span = max(self.total_steps - self.warmup_steps, 1)
        progress = min(max(step - self.warmup_steps, 0) / span, 1.0)
        return self.min_lr + 0.5 * (self.peak_lr - self.min_lr) * (1.0 + math.cos(math.pi * progress))


def clip_grad_norm(grads: list[np.ndarray], max_norm: float) -> tuple[list[np.ndarray], float]:
    """Scale all gradients by ``min(1, max_norm / ||g||)``; returns the pre-clip norm."""
    total = math.sqrt(sum(float(np.sum(g * g)) for g in grads))
    if total > max_norm and total > 0:
        scale = max_norm / total
        grads = [g * scale for g in grads]
    return grads, total


@dataclass
class AdamW:
    params: list[Tensor]
    lr: float = 1e-3
    weight_decay: float = 0.1
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    max_grad_norm: float | None = 1.0
    schedule: CosineWarmup | None = None
    no_decay: set[str] = field(default_factory=set)
    step_count: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        if not self.m:
            self.m = [np.zeros_like(p.data) for p in self.params]
            self.v = [np.zeros_like(p.data) for p in self.params]

    def current_lr(self) -> float:
        return self.schedule(self.step_count) if self.schedule is not None else self.lr

    def step(self, grads: list[np.ndarray] | None = None) -> float:
        """One update. ``grads`` defaults to each parameter's ``.grad`` (zeros if unset).

        Returns the gradient norm measured before clipping.
        """
        if grads is None:
            grads = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in self.params]
        norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads))
        if self.max_grad_norm is not None:
            grads, norm = clip_grad_norm(grads, self.max_grad_norm)
        lr = self.current_lr()
        self.step_count += 1
        b1, b2 = self.betas
        c1 = 1.0 - b1 ** self.step_count
        c2 = 1.0 - b2 ** self.step_count
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            if self.weight_decay and p.name not in self.no_decay:
                p.data -= lr * self.weight_decay * p.data
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p.data -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
        return norm

    def state_dict(self) -> dict:
        return {"step": self.step_count, "m": [a.copy() for a in self.m], "v": [a.copy() for a in self.v]}
