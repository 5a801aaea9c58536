"""Finite-difference gradient verification.

Always runs in 64-bit precision: the function under test is handed a
float64 copy of the probe tensor and its output is projected onto a
fixed random direction to obtain a scalar.
"""

from __future__ import annotations

import numpy as np

from .tensor import Tensor, backward


def grad_check(f, x: Tensor, h: float | None = None, seed: int = 0) -> float:
    """Max relative error between analytic and central-difference gradients.

    `f` maps a tensor to a tensor and must be a pure function of its
    argument. The step per coordinate is h * (1 + |x_i|) with h
    defaulting to 1e-6. Error metric per coordinate:
    |analytic - numeric| / max(1, |analytic|, |numeric|).
    """
    if h is None:
        h = 1e-6
    base = x.data.astype(np.float64)
    rng = np.random.default_rng(seed)

    probe = Tensor(base.copy(), requires_grad=True, dtype=np.float64)
    out = f(probe)
    proj = rng.standard_normal(out.shape)

    def scalarize(t: Tensor) -> float:
        v = float((t.data * proj).sum())
        if not np.isfinite(v):
            raise FloatingPointError("grad_check: non-finite forward value")
        return v

    s = (out * Tensor(proj, dtype=np.float64)).sum()
    backward(s)
    analytic = probe.grad
    if analytic is None:
        raise RuntimeError("grad_check: no gradient reached the probe tensor")
    if not np.all(np.isfinite(analytic)):
        raise FloatingPointError("grad_check: non-finite analytic gradient")

    flat = base.reshape(-1)
    worst = 0.0
    for i in range(flat.size):
        step = h * (1.0 + abs(flat[i]))
        bumped = flat.copy()
        bumped[i] = flat[i] + step
        up = scalarize(f(Tensor(bumped.reshape(base.shape), dtype=np.float64)))
        bumped[i] = flat[i] - step
        down = scalarize(f(Tensor(bumped.reshape(base.shape), dtype=np.float64)))
        numeric = (up - down) / (2.0 * step)
        a = analytic.reshape(-1)[i]
        err = abs(a - numeric) / max(1.0, abs(a), abs(numeric))
        if err > worst:
            worst = err
    return worst
