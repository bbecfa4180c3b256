"""AdamW with decoupled weight decay, the one-cycle schedule and gradient clipping."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import StateError


@dataclass
class AdamState:
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


def adamw_step(params: Sequence[np.ndarray], grads: Sequence[np.ndarray], state: AdamState, lr: float,
               betas=(0.9, 0.999), weight_decay: float = 0.05, eps: float = 1e-8,
               decay_mask: Sequence[bool] | None = None) -> AdamState:
    """Apply one AdamW update to ``params`` in place.

    Decay is applied directly to the weights (``p -= lr * wd * p``) and skipped
    wherever ``decay_mask`` is False.
    """
    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    if len(state.m) != len(params) or any(m.shape != p.shape for m, p in zip(state.m, params)):
        raise StateError("optimizer moments do not match parameter shapes")
    if len(grads) != len(params):
        raise StateError(f"{len(grads)} gradients for {len(params)} parameters")
    b1, b2 = betas
    state.step += 1
    bc1 = 1.0 - b1 ** state.step
    bc2 = 1.0 - b2 ** state.step
    step_size = lr / bc1
    for i, (p, g) in enumerate(zip(params, grads)):
        if g is None:
            continue
        if g.shape != p.shape:
            raise StateError(f"gradient shape {g.shape} != parameter shape {p.shape}")
        if weight_decay and (decay_mask is None or decay_mask[i]):
            p *= 1.0 - lr * weight_decay
        m, v = state.m[i], state.v[i]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p -= step_size * m / (np.sqrt(v / bc2) + eps)
    return state


class AdamW:
    """Stateful wrapper over :func:`adamw_step` for a list of Parameters."""

    def __init__(self, params, lr: float = 6.5e-4, betas=(0.9, 0.999), weight_decay: float = 0.05,
                 eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.betas = betas
        self.weight_decay = weight_decay
        self.eps = eps
        self.state = AdamState()

    def step(self) -> None:
        adamw_step([p.data for p in self.params], [p.grad for p in self.params], self.state, self.lr,
                   self.betas, self.weight_decay, self.eps, [getattr(p, "decay", True) for p in self.params])

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None


def one_cycle_lr(step: int, total_steps: int, warmup_steps: float, peak: float,
                 final_ratio: float = 1e-6) -> float:
    """Linear ramp 0 -> peak over ``warmup_steps``, then cosine decay to ``peak * final_ratio``."""
    if step <= 0:
        return 0.0
    if step < warmup_steps:
        return peak * step / warmup_steps
    span = max(total_steps - warmup_steps, 1e-12)
    t = min((step - warmup_steps) / span, 1.0)
    low = peak * final_ratio
    return low + 0.5 * (peak - low) * (1.0 + math.cos(math.pi * t))


def clip_grad_norm(params, max_norm: float) -> float:
    """Rescale gradients so their global L2 norm is at most ``max_norm``; returns the pre-clip norm."""
    grads = [p.grad for p in params if p.grad is not None]
    total = math.sqrt(float(sum(float(np.vdot(g, g)) for g in grads)))
    if total > max_norm:
        scale = max_norm / (total + 1e-12)
        for g in grads:
            g *= scale
    return total
