"""Adam optimizer with bias correction over named parameter dicts."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: dict[str, np.ndarray],
              grads: dict[str, np.ndarray],
              state: AdamState) -> dict[str, np.ndarray]:
    """One bias-corrected Adam update. Returns new parameter arrays.

    Moment buffers in `state` are updated in place; parameter arrays are
    replaced, never mutated.
    """
    if state.lr <= 0:
        raise ValueError(f"learning rate must be positive, got {state.lr}")
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(
                f"non-finite gradient for parameter '{name}' at step {state.step + 1}")
        if g.shape != params[name].shape:
            raise ValueError(
                f"gradient shape {g.shape} does not match parameter "
                f"'{name}' shape {params[name].shape}")
    state.step += 1
    t = state.step
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t
    out = {}
    for name, p in params.items():
        g = grads[name]
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(p)
            v = np.zeros_like(p)
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * v + (1.0 - state.beta2) * g * g
        state.m[name] = m
        state.v[name] = v
        m_hat = m / bc1
        v_hat = v / bc2
        out[name] = p - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return out
