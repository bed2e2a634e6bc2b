"""Adam optimizer with bias correction."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import NumericalError, ValidationError
from .nn import ParamStore


@dataclass
class AdamState:
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(
    params: ParamStore,
    lr: float = 1e-3,
    betas: tuple = (0.9, 0.999),
    eps: float = 1e-8,
    state: AdamState | None = None,
) -> AdamState:
    """Apply one Adam update in place and return the advanced state.

    Raises:
        NumericalError: a gradient is NaN or infinite (message names the parameter).
    """
    if not lr > 0 or not eps > 0:
        raise ValidationError(f"lr and eps must be positive, got lr={lr}, eps={eps}")
    b1, b2 = betas
    state = state if state is not None else AdamState()
    grads = params.grads()
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericalError(f"non-finite gradient for parameter {name!r}")
    state.step += 1
    t = state.step
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    for name, p in params.items():
        g = grads[name]
        m = state.m.get(name)
        v = state.v.get(name)
        m = (1.0 - b1) * g if m is None else b1 * m + (1.0 - b1) * g
        v = (1.0 - b2) * g * g if v is None else b2 * v + (1.0 - b2) * g * g
        state.m[name], state.v[name] = m, v
        p.data = p.data - lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return state
