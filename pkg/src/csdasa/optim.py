"""Adam with bias correction over named parameter maps."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor


@dataclass
class AdamState:
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: dict[str, Tensor], grads: dict[str, np.ndarray], state: AdamState,
              lr: float = 1e-4, betas: tuple[float, float] = (0.9, 0.999),
              eps: float = 1e-8) -> tuple[dict[str, Tensor], AdamState]:
    """One Adam update. Only names present in ``grads`` move.

    Returns a new parameter map (untouched entries are shared) and the
    advanced state.
    """
    b1, b2 = betas
    t = state.step + 1
    m, v = dict(state.m), dict(state.v)
    out = dict(params)
    for name, g in grads.items():
        p = params[name]
        m_prev = m.get(name, np.zeros_like(p.data))
        v_prev = v.get(name, np.zeros_like(p.data))
        m[name] = b1 * m_prev + (1 - b1) * g
        v[name] = b2 * v_prev + (1 - b2) * g * g
        m_hat = m[name] / (1 - b1 ** t)
        v_hat = v[name] / (1 - b2 ** t)
        out[name] = Tensor(p.data - lr * m_hat / (np.sqrt(v_hat) + eps),
                           requires_grad=p.requires_grad, name=p.name)
    return out, AdamState(step=t, m=m, v=v)
