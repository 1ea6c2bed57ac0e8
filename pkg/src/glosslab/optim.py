"""Optimizers and learning-rate schedules for the tensor engine."""

from __future__ import annotations

from typing import Optional

import numpy as np

from .errors import ConfigError
from .tensor import DTYPE, Tensor


class AdamW:
    """Adam with decoupled weight decay and bias-corrected moments.

    The decay term is applied directly to the parameter, independently of
    the adaptive update, so a zero gradient still shrinks weights.
    """

    def __init__(self, params: dict[str, Tensor], lr: float = 1e-3,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8,
                 weight_decay: float = 0.01):
        self.params = dict(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in self.params.items()}

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def step(self) -> None:
        self.t += 1
        b1t = 1.0 - self.beta1 ** self.t
        b2t = 1.0 - self.beta2 ** self.t
        for k, p in self.params.items():
            g = p.grad
            if g is None:
                g = np.zeros_like(p.data)
            m = self.m[k]
            v = self.v[k]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            update = (m / b1t) / (np.sqrt(v / b2t) + self.eps)
            p.data -= DTYPE(self.lr) * update
            if self.weight_decay:
                p.data -= DTYPE(self.lr * self.weight_decay) * p.data


class AdaGrad:
    """Per-element adaptive SGD on accumulated squared gradients."""

    def __init__(self, params: dict[str, Tensor], lr: float = 0.05,
                 initial_accumulator: float = 0.0, eps: float = 1e-10):
        self.params = dict(params)
        self.lr = lr
        self.eps = eps
        self.acc = {k: np.full_like(p.data, initial_accumulator)
                    for k, p in self.params.items()}
        self.t = 0

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def step(self) -> None:
        self.t += 1
        for k, p in self.params.items():
            g = p.grad
            if g is None:
                continue
            acc = self.acc[k]
            acc += g * g
            p.data -= DTYPE(self.lr) * g / (np.sqrt(acc) + self.eps)


class PlateauSchedule:
    """Multiply lr by `factor` after `patience` consecutive epochs without
    improvement of the tracked metric (lower is better)."""

    def __init__(self, lr: float, factor: float = 0.1, patience: int = 5):
        if not 0 < factor < 1:
            raise ConfigError(f"plateau factor must be in (0, 1), got {factor}")
        self.lr = lr
        self.factor = factor
        self.patience = patience
        self.best: Optional[float] = None
        self.bad_epochs = 0

    def step(self, metric: float) -> float:
        if self.best is None or metric < self.best:
            self.best = metric
            self.bad_epochs = 0
        else:
            self.bad_epochs += 1
            if self.bad_epochs > self.patience:
                self.lr *= self.factor
                self.bad_epochs = 0
        return self.lr


class CosineWarmupSchedule:
    """Linear warmup from 0 to lr_max, then cosine decay to lr_min."""

    def __init__(self, lr_max: float, warmup_steps: int, total_steps: int,
                 lr_min: float = 0.0):
        if total_steps <= warmup_steps:
            raise ConfigError("cosine schedule needs total_steps > warmup_steps")
        self.lr_max = lr_max
        self.lr_min = lr_min
        self.warmup_steps = warmup_steps
        self.total_steps = total_steps
        self.step_idx = 0
        self.lr = 0.0 if warmup_steps > 0 else lr_max

    def step(self) -> float:
        self.step_idx += 1
        t = self.step_idx
        if t <= self.warmup_steps:
            self.lr = self.lr_max * t / self.warmup_steps
        elif t >= self.total_steps:
            self.lr = self.lr_min
        else:
            frac = (t - self.warmup_steps) / (self.total_steps - self.warmup_steps)
            self.lr = self.lr_min + 0.5 * (self.lr_max - self.lr_min) * (1.0 + np.cos(np.pi * frac))
        return self.lr
