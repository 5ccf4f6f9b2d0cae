"""Adam and reduce-on-plateau learning-rate scheduling."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import torch

from ..errors import NumericError


@dataclass
class OptimState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("learning rate must be positive")


@torch.no_grad()
def adam_step(state: OptimState, params: dict, grads: dict) -> dict:
    """One bias-corrected Adam update, applied in place. Returns ``params``."""
    for name, g in grads.items():
        if name not in params:
            continue
        if g.shape != params[name].shape:
            raise ValueError(f"gradient shape mismatch for {name}")
        if not torch.all(torch.isfinite(g)):
            raise NumericError(f"non-finite gradient for {name}; step aborted")

    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1**t
    c2 = 1.0 - state.beta2**t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = torch.zeros_like(p)
            state.v[name] = torch.zeros_like(p)
        v = state.v[name]
        m.mul_(state.beta1).add_(g, alpha=1.0 - state.beta1)
        v.mul_(state.beta2).addcmul_(g, g, value=1.0 - state.beta2)
        denom = (v / c2).sqrt_().add_(state.eps)
        p.addcdiv_(m, denom, value=-state.lr / c1)
    return params


@dataclass
class SchedulerState:
    best_val_loss: float = math.inf
    epochs_since_improvement: int = 0
    factor: float = 0.5
    patience: int = 10
    threshold: float = 1e-6


def scheduler_update(state: SchedulerState, val_loss: float, lr: float) -> float:
    if not math.isfinite(val_loss):
        raise NumericError(f"validation loss is not finite: {val_loss}")
    if val_loss < state.best_val_loss - state.threshold:
        state.best_val_loss = val_loss
        state.epochs_since_improvement = 0
        return lr
    state.epochs_since_improvement += 1
    if state.epochs_since_improvement >= state.patience:
        state.epochs_since_improvement = 0
        return lr * state.factor
    return lr
