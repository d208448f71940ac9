"""AdamW with decoupled weight decay and the poly learning-rate schedule."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Mapping, Optional

import numpy as np

from .errors import ContractViolation


@dataclass
class OptimState:
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0


def adamw_step(params: Mapping[str, np.ndarray], grads: Mapping[str, Optional[np.ndarray]], state: OptimState,
               lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8,
               weight_decay: float = 0.01) -> None:
    """Update ``params`` in place.

    Decay is applied first (p -= lr * wd * p), then the bias-corrected Adam
    step. Parameters whose gradient is None are skipped entirely, decay
    included, so parameters that no loss term reaches stay untouched.
    """
    state.step += 1
    t = state.step
    c1, c2 = 1.0 - beta1 ** t, 1.0 - beta2 ** t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        if g.shape != p.shape:
            raise ContractViolation(f"{name}: gradient shape {g.shape} != parameter shape {p.shape}")
        m = state.m.setdefault(name, np.zeros_like(p))
        v = state.v.setdefault(name, np.zeros_like(p))
        if m.shape != p.shape or v.shape != p.shape:
            raise ContractViolation(f"{name}: optimizer state shape does not match the parameter")
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        if weight_decay:
            p -= lr * weight_decay * p
        p -= lr * (m / c1) / (np.sqrt(v / c2) + eps)


def poly_lr(iteration: int, max_iter: int, base_lr: float, power: float = 0.9) -> float:
    """base_lr * (1 - iteration / max_iter) ** power, clamped to 0 past the end."""
    if iteration < 0 or max_iter <= 0:
        raise ContractViolation("poly_lr needs iteration >= 0 and max_iter > 0")
    if power <= 0:
        raise ContractViolation("poly power must be > 0")
    if iteration >= max_iter:
        return 0.0
    return base_lr * (1.0 - iteration / max_iter) ** power
