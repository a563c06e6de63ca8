"""SGD with momentum, Adam, and piecewise-constant learning-rate schedules.

Updates replace arrays in the parameter dict rather than writing in place,
so snapshots taken before a step stay valid.
"""

from __future__ import annotations

from bisect import bisect_right
from dataclasses import dataclass, field

import numpy as np

from rocket.errors import DimensionError, SpecError


@dataclass(frozen=True)
class LrSchedule:
    initial: float = 0.1
    factor: float = 0.2
    milestones: tuple[int, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "milestones", tuple(int(m) for m in self.milestones))
        if not self.initial > 0:
            raise SpecError("initial learning rate must be positive")
        if not 0 < self.factor <= 1:
            raise SpecError("decay factor must lie in (0, 1]")
        if list(self.milestones) != sorted(self.milestones):
            raise SpecError("milestones must be ascending")


def lr_at(schedule: LrSchedule, epoch: int) -> float:
    """initial * factor ** (number of milestones <= epoch)."""
    return schedule.initial * schedule.factor ** bisect_right(schedule.milestones, epoch)


def _check(params: dict, grads: dict) -> None:
    for name, g in grads.items():
        if name not in params:
            raise DimensionError(f"gradient for unknown parameter {name!r}")
        if params[name].shape != g.shape:
            raise DimensionError(
                f"{name}: parameter {params[name].shape} vs gradient {g.shape}"
            )


@dataclass
class SGDMomentum:
    """v <- mu * v + g;  w <- w - lr * v."""

    momentum: float = 0.9
    weight_decay: float = 0.0
    velocity: dict[str, np.ndarray] = field(default_factory=dict)

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray], lr: float) -> None:
        _check(params, grads)
        for name, g in grads.items():
            w = params[name]
            if self.weight_decay:
                g = g + self.weight_decay * w
            v = self.velocity.get(name)
            v = g.copy() if v is None else self.momentum * v + g
            self.velocity[name] = v
            params[name] = w - lr * v


@dataclass
class Adam:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray], lr: float) -> None:
        _check(params, grads)
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for name, g in grads.items():
            w = params[name]
            if self.weight_decay:
                g = g + self.weight_decay * w
            m = self.m.get(name, np.zeros_like(w))
            v = self.v.get(name, np.zeros_like(w))
            m = self.beta1 * m + (1.0 - self.beta1) * g
            v = self.beta2 * v + (1.0 - self.beta2) * (g * g)
            self.m[name], self.v[name] = m, v
            params[name] = w - lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def sgd_momentum_step(params, grads, state: SGDMomentum, lr: float) -> None:
    state.step(params, grads, lr)


def adam_step(params, grads, state: Adam, lr: float) -> None:
    state.step(params, grads, lr)


def make_optimizer(kind: str, momentum: float = 0.9, weight_decay: float = 0.0,
                   beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
    if kind == "sgd":
        return SGDMomentum(momentum=momentum, weight_decay=weight_decay)
    if kind == "adam":
        return Adam(beta1=beta1, beta2=beta2, eps=eps, weight_decay=weight_decay)
    raise SpecError(f"unknown optimizer {kind!r}; expected sgd or adam")
