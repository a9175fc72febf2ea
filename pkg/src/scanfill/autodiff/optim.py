"""First-order optimizers and learning-rate schedules."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .tensor import Tensor

log = logging.getLogger(__name__)


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)
    skipped: int = 0


def adam_step(params: Sequence[np.ndarray], grads: Sequence[np.ndarray], state: AdamState, lr: float) -> bool:
    """One in-place Adam update. Returns False (and leaves everything untouched) on a non-finite gradient."""
    if len(params) != len(grads):
        raise ValueError(f"got {len(params)} params but {len(grads)} grads")
    for p, g in zip(params, grads):
        if p.shape != g.shape:
            raise ValueError(f"gradient shape {g.shape} does not match parameter {p.shape}")
    if not all(np.all(np.isfinite(g)) for g in grads):
        state.skipped += 1
        log.warning("non-finite gradient, Adam step %d skipped", state.step + 1)
        return False
    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= (lr * (m / c1) / (np.sqrt(v / c2) + state.epsilon)).astype(p.dtype)
    return True


class Adam:
    """Adam over a fixed list of parameter tensors."""

    def __init__(self, params: Sequence[Tensor], lr: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.state = AdamState(beta1=betas[0], beta2=betas[1], epsilon=eps)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self, lr: float | None = None) -> bool:
        grads = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in self.params]
        return adam_step([p.data for p in self.params], grads, self.state, self.lr if lr is None else lr)


@dataclass(frozen=True)
class LrSchedule:
    """Per-epoch learning rate.

    In ``exponential-decay`` mode the rate shrinks geometrically so that the
    final epoch of the horizon runs at exactly ``base_lr / decay_factor``.
    """

    base_lr: float
    mode: str = "constant"
    decay_factor: float = 5.0
    horizon: int = 1

    def __post_init__(self):
        if self.mode not in ("constant", "exponential-decay"):
            raise ValueError(f"unknown schedule mode {self.mode!r}")
        if self.base_lr <= 0 or self.decay_factor <= 0 or self.horizon < 1:
            raise ValueError("base_lr, decay_factor and horizon must be positive")

    def __call__(self, epoch: int) -> float:
        if self.mode == "constant" or self.horizon == 1:
            return self.base_lr
        frac = min(epoch, self.horizon - 1) / (self.horizon - 1)
        return self.base_lr * math.exp(-frac * math.log(self.decay_factor))


class ReduceOnPlateau:
    """Multiply the learning rate by ``factor`` after ``patience`` epochs without relative improvement."""

    def __init__(self, lr: float, factor: float = 0.1, patience: int = 3, threshold: float = 1e-4):
        self.lr = lr
        self.factor = factor
        self.patience = patience
        self.threshold = threshold
        self.best = math.inf
        self.bad_epochs = 0

    def step(self, metric: float) -> float:
        if metric < self.best * (1.0 - self.threshold):
            self.best = metric
            self.bad_epochs = 0
        else:
            self.bad_epochs += 1
            if self.bad_epochs > self.patience:
                self.lr *= self.factor
                self.bad_epochs = 0
        return self.lr


class EarlyStopping:
    """Stop once the monitored loss fails to improve by ``threshold`` for ``patience`` epochs."""

    def __init__(self, patience: int = 8, threshold: float = 1e-4):
        self.patience = patience
        self.threshold = threshold
        self.best = math.inf
        self.bad_epochs = 0

    def step(self, metric: float) -> bool:
        if self.best - metric > self.threshold:
            self.best = metric
            self.bad_epochs = 0
        else:
            self.bad_epochs += 1
        return self.bad_epochs >= self.patience
