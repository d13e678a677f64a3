"""Bias-corrected Adam shared by the constraint learner and the policy optimizer."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class AdamState:
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(state: AdamState, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]):
    """One descent step. Callers maximizing an objective pass negated gradients.

    Returns (state, new_params); neither input mapping is mutated.
    """
    if set(params) != set(grads):
        raise ValueError(f"params/grads keys differ: {sorted(params)} vs {sorted(grads)}")
    t = state.t + 1
    m, v, out = dict(state.m), dict(state.v), {}
    bc1 = 1.0 - state.beta1**t
    bc2 = 1.0 - state.beta2**t
    for name, p in params.items():
        g = np.asarray(grads[name], dtype=float)
        if g.shape != np.shape(p):
            raise ValueError(f"{name}: grad shape {g.shape} does not match param shape {np.shape(p)}")
        m_prev = m.get(name, np.zeros_like(g))
        v_prev = v.get(name, np.zeros_like(g))
        m[name] = state.beta1 * m_prev + (1.0 - state.beta1) * g
        v[name] = state.beta2 * v_prev + (1.0 - state.beta2) * g * g
        m_hat = m[name] / bc1
        v_hat = v[name] / bc2
        out[name] = p - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    new_state = AdamState(state.lr, state.beta1, state.beta2, state.eps, t, m, v)
    return new_state, out
