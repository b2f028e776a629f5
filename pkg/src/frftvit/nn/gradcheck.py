"""Finite-difference gradient checking for parameter dicts."""

from __future__ import annotations

import numpy as np


def numeric_grad(loss_fn, params: dict, name: str, step: float = 1e-5) -> np.ndarray:
    """Central differences of ``loss_fn()`` (a float) w.r.t. every entry of ``params[name]``."""
    p = params[name].value
    g = np.zeros_like(p)
    flat, gflat = p.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + step
        up = loss_fn()
        flat[i] = old - step
        down = loss_fn()
        flat[i] = old
        gflat[i] = (up - down) / (2 * step)
    return g


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> float:
    """Max elementwise ``|a - n| / max(|a|, |n|, floor)``."""
    den = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / den)) if analytic.size else 0.0


def gradcheck(loss_graph_fn, params: dict, step: float = 1e-5, floor: float = 1e-6) -> dict:
    """Compare backward() against central differences for every parameter.

    ``loss_graph_fn()`` must rebuild the forward graph from ``params`` and
    return a scalar Tensor. Returns ``{name: max relative error}``.
    """
    for p in params.values():
        p.grad = None
    loss_graph_fn().backward()
    analytic = {k: (p.grad if p.grad is not None else np.zeros_like(p.value)).copy() for k, p in params.items()}

    def value():
        return float(loss_graph_fn().value)

    return {k: relative_error(analytic[k], numeric_grad(value, params, k, step), floor) for k in params}
