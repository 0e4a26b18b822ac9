"""Adam with bias-corrected moment estimates."""

from collections import OrderedDict
from dataclasses import dataclass

import numpy as np

from ..errors import ShapeMismatch


@dataclass(frozen=True)
class AdamConfig:
    learning_rate: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning rate must be positive")


@dataclass(frozen=True)
class AdamState:
    m: OrderedDict
    v: OrderedDict
    step: int = 0

    @classmethod
    def zeros_like(cls, params) -> "AdamState":
        return cls(
            OrderedDict((k, np.zeros_like(p)) for k, p in params.items()),
            OrderedDict((k, np.zeros_like(p)) for k, p in params.items()),
            0,
        )


def adam_update(params, grads, state: AdamState, cfg: AdamConfig = AdamConfig()):
    """One Adam step. Returns new ``(params, state)``; the inputs are not modified."""
    if set(params) != set(grads) or set(params) != set(state.m):
        raise ShapeMismatch("params, grads and optimizer state name different tensors")
    t = state.step + 1
    b1, b2 = cfg.beta1, cfg.beta2
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    new_p, new_m, new_v = OrderedDict(), OrderedDict(), OrderedDict()
    for k, p in params.items():
        g = grads[k]
        if g.shape != p.shape or state.m[k].shape != p.shape:
            raise ShapeMismatch(f"shape mismatch for {k}: {p.shape} vs {g.shape}")
        m = b1 * state.m[k] + (1.0 - b1) * g
        v = b2 * state.v[k] + (1.0 - b2) * g * g
        step = cfg.learning_rate * (m / c1) / (np.sqrt(v / c2) + cfg.eps)
        new_p[k] = (p - step).astype(p.dtype, copy=False)
        new_m[k] = m.astype(p.dtype, copy=False)
        new_v[k] = v.astype(p.dtype, copy=False)
    return new_p, AdamState(new_m, new_v, t)
