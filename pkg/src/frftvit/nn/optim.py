"""Adam with bias correction, operating in place on parameter tensors."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class AdamState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: dict, grads: dict | None, state: AdamState) -> None:
    """One Adam update.

    ``grads`` maps names to arrays; with ``None`` each parameter's ``.grad``
    is used. Parameters without a gradient are skipped (treated as zero
    gradient: their moments decay but a zero moment gives no update).
    """
    state.step += 1
    bc1 = 1.0 - state.beta1**state.step
    bc2 = 1.0 - state.beta2**state.step
    for name, p in params.items():
        g = p.grad if grads is None else grads.get(name)
        if g is None:
            continue
        if name not in state.m:
            state.m[name] = np.zeros_like(p.value)
            state.v[name] = np.zeros_like(p.value)
        m, v = state.m[name], state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p.value -= (state.lr / bc1) * m / (np.sqrt(v / bc2) + state.eps)


def zero_grads(params: dict) -> None:
    for p in params.values():
        p.grad = None
