"""Fully connected multi-task baseline: batch norm + dense stack + 4 scalar heads."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import tensor as T
from .tensor import Tensor
from .vit import TASKS, _dense_init

DEFAULT_WIDTHS = (2000, 800, 400, 100, 50, 20, 10)


@dataclass(frozen=True)
class DnnConfig:
    image_size: int = 100
    channels: int = 2
    widths: tuple = DEFAULT_WIDTHS
    n_tasks: int = 4
    bn_momentum: float = 0.1
    bn_eps: float = 1e-5

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        if not self.widths or min(self.widths) < 1:
            raise ValueError("widths must be a nonempty list of positive sizes")

    @property
    def input_dim(self) -> int:
        return self.image_size * self.image_size * self.channels

    def to_dict(self) -> dict:
        d = asdict(self)
        d["widths"] = list(self.widths)
        return d


def init_dnn(cfg: DnnConfig, seed: int = 0, dtype=np.float64):
    """Returns ``(params, buffers)``; buffers are the batch-norm running statistics."""
    rng = np.random.default_rng(seed)
    p = {}

    def add(name, arr):
        p[name] = Tensor(np.asarray(arr, dtype=dtype), requires_grad=True, name=name)

    add("bn.g", np.ones(cfg.input_dim))
    add("bn.b", np.zeros(cfg.input_dim))
    fan_in = cfg.input_dim
    for i, w in enumerate(cfg.widths):
        add(f"dense{i}.W", _dense_init(rng, fan_in, w, dtype))
        add(f"dense{i}.b", np.zeros(w))
        fan_in = w
    for t in TASKS[: cfg.n_tasks]:
        add(f"head.{t}.W", _dense_init(rng, fan_in, 1, dtype))
        add(f"head.{t}.b", np.full(1, 0.5))
    buffers = {
        "bn.running_mean": np.zeros(cfg.input_dim, dtype=dtype),
        "bn.running_var": np.ones(cfg.input_dim, dtype=dtype),
    }
    return p, buffers


def dnn_forward(img, params: dict, cfg: DnnConfig, buffers: dict | None = None, training=False) -> Tensor:
    """Predictions ``(B, n_tasks)``: flatten, batch norm, GELU dense stack, linear heads.

    In training mode the batch statistics are used and ``buffers`` (if given)
    are updated. In eval mode ``buffers`` is required.
    """
    x = np.asarray(getattr(img, "pixels", img), dtype=params["bn.g"].dtype)
    if x.ndim == 3:
        x = x[None]
    if x.shape[1:] != (cfg.image_size, cfg.image_size, cfg.channels):
        raise ValueError("image shape does not match config")
    x = x.reshape(x.shape[0], -1)
    if not training and buffers is None:
        raise ValueError("eval mode needs batch-norm running statistics")
    rm = buffers["bn.running_mean"] if buffers else None
    rv = buffers["bn.running_var"] if buffers else None
    h = T.batch_norm(x, params["bn.g"], params["bn.b"], rm, rv, training, cfg.bn_momentum, cfg.bn_eps)
    for i in range(len(cfg.widths)):
        h = T.check_finite(T.gelu(T.linear(h, params[f"dense{i}.W"], params[f"dense{i}.b"])), i)
    heads = [T.linear(h, params[f"head.{t}.W"], params[f"head.{t}.b"]) for t in TASKS[: cfg.n_tasks]]
    return T.concatenate(heads, axis=-1)
