"""SGD with momentum, Adam, and step-indexed learning-rate schedules."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .tensor import Parameter


class MissingGradError(RuntimeError):
    pass


class Optimizer:
    kind = "base"

    def __init__(self, params: Sequence[Parameter], lr: float):
        if lr <= 0:
            raise ValueError(f"learning rate must be positive, got {lr}")
        self.params = list(params)
        self.lr = lr
        self.base_lr = lr
        self.step_count = 0

    def _update(self, i: int, p: Parameter, g: np.ndarray) -> None:
        raise NotImplementedError

    def step(self) -> None:
        """Apply one update to every parameter, then clear their grads."""
        for p in self.params:
            if p.grad is None:
                raise MissingGradError(f"parameter {p.name!r} has no gradient; run backward() first")
        self.step_count += 1
        for i, p in enumerate(self.params):
            self._update(i, p, p.grad)
            p.grad = None

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None


class SGD(Optimizer):
    kind = "sgd"

    def __init__(self, params, lr: float = 0.1, momentum: float = 0.0, weight_decay: float = 0.0):
        super().__init__(params, lr)
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.velocity = [np.zeros_like(p.data) for p in self.params]

    def _update(self, i, p, g):
        if self.weight_decay:
            g = g + self.weight_decay * p.data
        if self.momentum:
            v = self.velocity[i]
            v *= self.momentum
            v += g
            g = v
        p.data -= self.lr * g


class Adam(Optimizer):
    kind = "adam"

    def __init__(self, params, lr: float = 1e-4, betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        super().__init__(params, lr)
        self.betas = betas
        self.eps = eps
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def _update(self, i, p, g):
        b1, b2 = self.betas
        m, v = self.m[i], self.v[i]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        mhat = m / (1 - b1 ** self.step_count)
        vhat = v / (1 - b2 ** self.step_count)
        p.data -= self.lr * mhat / (np.sqrt(vhat) + self.eps)


@dataclass
class LrSchedule:
    """Learning-rate multiplier as a function of progress through ``total`` steps.

    ``milestones`` are fractions of ``total``: each one passed multiplies the
    rate by ``factor``.
    """

    kind: str = "constant"
    total: int = 1
    milestones: tuple[float, ...] = field(default_factory=tuple)
    factor: float = 0.3

    def __post_init__(self):
        if self.kind not in ("constant", "multistep", "cosine"):
            raise ValueError(f"unknown schedule kind {self.kind!r}")
        ms = tuple(self.milestones)
        if any(not 0 < m < 1 for m in ms) or any(b <= a for a, b in zip(ms, ms[1:])):
            raise ValueError(f"milestones must be strictly increasing in (0, 1), got {ms}")
        if self.factor <= 0:
            raise ValueError("factor must be positive")
        self.milestones = ms

    def multiplier(self, step: int) -> float:
        if self.kind == "constant":
            return 1.0
        if self.kind == "cosine":
            t = min(step, self.total) / max(self.total, 1)
            return 0.5 * (1.0 + math.cos(math.pi * t))
        passed = sum(1 for m in self.milestones if step >= m * self.total)
        return self.factor ** passed

    def apply(self, opt: Optimizer, step: int) -> None:
        opt.lr = opt.base_lr * self.multiplier(step)


def default_schedule(total: int) -> LrSchedule:
    return LrSchedule("multistep", total, (0.1, 0.3, 0.5), 0.3)
