"""SGD with momentum under the poly learning-rate policy."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .params import ParameterStore


@dataclass
class OptimizerState:
    total_iters: int
    momentum: float = 0.9
    base_lr: float = 1e-4
    poly_power: float = 0.9
    velocities: dict[str, np.ndarray] = field(default_factory=dict)


def poly_lr(it: int, state: OptimizerState) -> float:
    """base_lr * (1 - it/total_iters) ** poly_power."""
    if not 0 <= it <= state.total_iters:
        raise ValueError(f"iteration {it} outside [0, {state.total_iters}]")
    return state.base_lr * (1.0 - it / state.total_iters) ** state.poly_power


def sgd_step(params: ParameterStore, state: OptimizerState, lr: float) -> None:
    """v <- momentum*v + grad; p <- p - lr*v; gradients are cleared."""
    for name, p in params.items():
        if p.grad is None:
            raise ValueError(f"sgd_step: parameter {name!r} has no gradient")
        v = state.velocities.get(name)
        if v is None:
            v = np.zeros_like(p.data)
        v = state.momentum * v + p.grad
        state.velocities[name] = v
        p.data -= np.asarray(lr, dtype=p.data.dtype) * v
        p.grad = None
