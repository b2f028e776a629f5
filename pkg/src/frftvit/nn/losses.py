"""MAE task losses and their weighted sum."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import Tensor
from .vit import TASKS


@dataclass(frozen=True)
class TaskWeights:
    cd: float = 1.0
    dgd: float = 1.0
    osnr: float = 1.0
    snr_nl: float = 1.0

    def __post_init__(self):
        vals = self.as_tuple()
        if any(v < 0 for v in vals) or not any(v > 0 for v in vals):
            raise ValueError("task weights must be >= 0 and not all zero")

    def as_tuple(self):
        return (self.cd, self.dgd, self.osnr, self.snr_nl)

    def for_task(self, task: str) -> float:
        return float(getattr(self, task))


def mae_loss(pred, target) -> Tensor:
    """Mean absolute error; the subgradient at zero error is 0."""
    pred = T.as_tensor(pred)
    target = np.asarray(getattr(target, "value", target), dtype=pred.dtype)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {target.shape}")
    return T.mean(T.abs_(T.sub(pred, target)))


def task_losses(pred: Tensor, target: np.ndarray) -> dict:
    """Per-task MAE from ``(B, 4)`` predictions and targets in ``TASKS`` column order."""
    return {t: mae_loss(T.getitem(pred, (slice(None), k)), np.asarray(target)[:, k]) for k, t in enumerate(TASKS)}


def total_loss(losses, weights: TaskWeights = TaskWeights()) -> Tensor:
    """``l_cd*L_cd + l_dgd*L_dgd + l_osnr*L_osnr + l_snr_nl*L_snr_nl``.

    ``losses`` is a dict keyed by task name, or a sequence in the order
    (CD, DGD, OSNR, SNR_NL).
    """
    if not isinstance(losses, dict):
        losses = list(losses)
        if len(losses) != 4:
            raise ValueError("need exactly 4 task losses")
        losses = dict(zip(("cd", "dgd", "osnr", "snr_nl"), losses))
    if set(losses) != set(TASKS):
        raise ValueError(f"losses must cover tasks {TASKS}")
    out = None
    for t in ("cd", "dgd", "osnr", "snr_nl"):
        term = T.mul(T.as_tensor(losses[t]), weights.for_task(t))
        out = term if out is None else T.add(out, term)
    return out
