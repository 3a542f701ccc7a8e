"""Adam updates and the warmup + cosine learning-rate schedule.

Weight decay is coupled by default (folded into the gradient before the
moment updates); pass decoupled=True for the AdamW-style variant where the
decay term bypasses the moments.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import NonFiniteError, Tensor


@dataclass
class AdamState:
    """First/second moment accumulators keyed like the parameter dict."""

    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def init_adam(params: dict[str, Tensor], beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> AdamState:
    state = AdamState(beta1=beta1, beta2=beta2, eps=eps)
    for name, p in params.items():
        state.m[name] = np.zeros_like(p.data)
        state.v[name] = np.zeros_like(p.data)
    return state


def zero_grads(params: dict[str, Tensor]) -> None:
    for p in params.values():
        p.grad = None


def adam_step(params: dict[str, Tensor], state: AdamState, lr: float,
              weight_decay: float = 0.0, decoupled: bool = False) -> None:
    """One bias-corrected Adam update, in place, reading each Tensor's .grad."""
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1 ** t
    bc2 = 1.0 - b2 ** t
    for name, p in params.items():
        if p.grad is None:
            raise ValueError(f"adam_step: parameter {name!r} has no gradient")
        if state.m.get(name) is None or state.m[name].shape != p.shape:
            raise ValueError(f"adam_step: state/parameter shape mismatch for {name!r}")
        g = p.grad
        if not np.all(np.isfinite(g)):
            raise NonFiniteError(
                f"adam_step: non-finite gradient for {name!r} at step {t}")
        if weight_decay and not decoupled:
            g = g + weight_decay * p.data
        m, v = state.m[name], state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        update = (m / bc1) / (np.sqrt(v / bc2) + state.eps)
        if weight_decay and decoupled:
            update = update + weight_decay * p.data
        p.data -= lr * update


def lr_at(step: int, base_lr: float, warmup_steps: int, total_steps: int) -> float:
    """Linear warmup from 0 to base_lr, then cosine decay to 0 at total_steps."""
    if step < 0:
        raise ValueError(f"step must be >= 0, got {step}")
    if not 0 <= warmup_steps < total_steps:
        raise ValueError(f"need 0 <= warmup_steps < total_steps, "
                         f"got {warmup_steps} and {total_steps}")
    if step < warmup_steps:
        return base_lr * step / warmup_steps
    if step >= total_steps:
        return 0.0
    progress = (step - warmup_steps) / (total_steps - warmup_steps)
    return base_lr * 0.5 * (1.0 + np.cos(np.pi * progress))
