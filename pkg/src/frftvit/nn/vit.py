"""Multi-task Vision Transformer regressor for (SNR_NL, OSNR, CD, DGD)."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import tensor as T
from .tensor import Tensor

TASKS = ("snr_nl", "osnr", "cd", "dgd")


@dataclass(frozen=True)
class VitConfig:
    image_size: int = 100
    channels: int = 2
    patch: int = 10
    d_model: int = 256
    n_heads: int = 4
    n_layers: int = 4
    ffn_hidden: int | None = None
    head_hidden: int = 256
    n_tasks: int = 4
    dropout: float = 0.0
    ln_eps: float = 1e-5

    def __post_init__(self):
        if self.ffn_hidden is None:
            object.__setattr__(self, "ffn_hidden", 4 * self.d_model)
        if self.image_size % self.patch:
            raise ValueError("image_size must be divisible by patch")
        if self.d_model % self.n_heads:
            raise ValueError("d_model must equal n_heads * d_k")
        if self.n_layers < 0 or self.n_tasks < 1:
            raise ValueError("n_layers >= 0 and n_tasks >= 1 required")
        if not 0 <= self.dropout < 1:
            raise ValueError("dropout must lie in [0, 1)")

    @property
    def d_k(self) -> int:
        return self.d_model // self.n_heads

    @property
    def n_tokens(self) -> int:
        return (self.image_size // self.patch) ** 2

    @property
    def patch_dim(self) -> int:
        return self.patch * self.patch * self.channels

    def to_dict(self) -> dict:
        return asdict(self)


def _dense_init(rng, fan_in, fan_out, dtype):
    return (rng.standard_normal((fan_in, fan_out)) / np.sqrt(fan_in)).astype(dtype)


def init_vit(cfg: VitConfig, seed: int = 0, dtype=np.float64) -> dict:
    """Fresh parameters as an ordered ``name -> Tensor`` dict.

    ``attn.Wq`` etc. hold all heads side by side: columns
    ``i*d_k:(i+1)*d_k`` are head ``i``'s projection.
    """
    rng = np.random.default_rng(seed)
    d, f = cfg.d_model, cfg.ffn_hidden
    p = {}

    def add(name, arr):
        p[name] = Tensor(np.asarray(arr, dtype=dtype), requires_grad=True, name=name)

    add("patch.W", _dense_init(rng, cfg.patch_dim, d, dtype))
    add("patch.b", np.zeros(d))
    add("pos", 0.02 * rng.standard_normal((cfg.n_tokens, d)))
    for i in range(cfg.n_layers):
        pre = f"layer{i}."
        add(pre + "ln1.g", np.ones(d))
        add(pre + "ln1.b", np.zeros(d))
        for w in ("Wq", "Wk", "Wv", "Wo"):
            add(pre + "attn." + w, _dense_init(rng, d, d, dtype))
        add(pre + "attn.bo", np.zeros(d))
        add(pre + "ln2.g", np.ones(d))
        add(pre + "ln2.b", np.zeros(d))
        add(pre + "ffn.W1", _dense_init(rng, d, f, dtype))
        add(pre + "ffn.b1", np.zeros(f))
        add(pre + "ffn.W2", _dense_init(rng, f, d, dtype))
        add(pre + "ffn.b2", np.zeros(d))
    add("dense.W", _dense_init(rng, cfg.n_tokens * d, cfg.head_hidden, dtype))
    add("dense.b", np.zeros(cfg.head_hidden))
    for t in TASKS[: cfg.n_tasks]:
        add(f"head.{t}.W", _dense_init(rng, cfg.head_hidden, 1, dtype))
        add(f"head.{t}.b", np.full(1, 0.5))
    return p


def param_count(cfg: VitConfig) -> int:
    d, f, n = cfg.d_model, cfg.ffn_hidden, cfg.n_tokens
    per_layer = 4 * d + 4 * d * d + d + d * f + f + f * d + d
    return (cfg.patch_dim * d + d + n * d + cfg.n_layers * per_layer
            + n * d * cfg.head_hidden + cfg.head_hidden + cfg.n_tasks * (cfg.head_hidden + 1))


def extract_patches(images: np.ndarray, patch: int) -> np.ndarray:
    """``(B, H, W, C)`` -> ``(B, n_tokens, patch*patch*C)``, patches row-major,
    each flattened in (row, col, channel) order."""
    b, h, w, c = images.shape
    x = images.reshape(b, h // patch, patch, w // patch, patch, c)
    return x.transpose(0, 1, 3, 2, 4, 5).reshape(b, (h // patch) * (w // patch), patch * patch * c)


def _as_batch(img, cfg: VitConfig, dtype):
    x = np.asarray(getattr(img, "pixels", img), dtype=dtype)
    if x.ndim == 3:
        x = x[None]
    expected = (cfg.image_size, cfg.image_size, cfg.channels)
    if x.ndim != 4 or x.shape[1:] != expected:
        raise ValueError(f"image shape {x.shape[1:]} does not match config {expected}")
    return x


def patch_embed(img, params: dict, cfg: VitConfig, with_pos: bool = True) -> Tensor:
    """Tokens ``(B, n_tokens, d_model)``: linear patch projection plus positional embedding."""
    x = _as_batch(img, cfg, params["patch.W"].dtype)
    tokens = T.linear(extract_patches(x, cfg.patch), params["patch.W"], params["patch.b"])
    return T.add(tokens, params["pos"]) if with_pos else tokens


def attention(q, k, v) -> Tensor:
    """``softmax(q k^T / sqrt(d_k)) v`` over the last two axes."""
    q, k, v = T.as_tensor(q), T.as_tensor(k), T.as_tensor(v)
    scores = T.mul(T.matmul(q, T.transpose(k, _swap_last(k.ndim))), 1.0 / np.sqrt(q.shape[-1]))
    return T.matmul(T.softmax(scores, axis=-1), v)


def _swap_last(ndim):
    axes = list(range(ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return tuple(axes)


def _split_heads(x: Tensor, h: int) -> Tensor:
    b, n, d = x.shape
    return T.transpose(T.reshape(x, (b, n, h, d // h)), (0, 2, 1, 3))


def _merge_heads(x: Tensor) -> Tensor:
    b, h, n, dk = x.shape
    return T.reshape(T.transpose(x, (0, 2, 1, 3)), (b, n, h * dk))


def multi_head(x: Tensor, params: dict, prefix: str, n_heads: int) -> Tensor:
    """Self-attention with ``n_heads`` heads on ``(B, N, d_model)`` input."""
    x = T.as_tensor(x)
    squeeze = x.ndim == 2
    if squeeze:
        x = T.reshape(x, (1,) + x.shape)
    q = _split_heads(T.matmul(x, params[prefix + "Wq"]), n_heads)
    k = _split_heads(T.matmul(x, params[prefix + "Wk"]), n_heads)
    v = _split_heads(T.matmul(x, params[prefix + "Wv"]), n_heads)
    out = T.linear(_merge_heads(attention(q, k, v)), params[prefix + "Wo"], params[prefix + "bo"])
    return T.reshape(out, out.shape[1:]) if squeeze else out


def encoder_block(x, params: dict, layer: int, cfg: VitConfig, training=False, rng=None) -> Tensor:
    """Pre-norm block: ``x1 = MHSA(LN(x)) + x``, ``out = FFN(LN(x1)) + x1``."""
    pre = f"layer{layer}."
    h = T.layer_norm(x, params[pre + "ln1.g"], params[pre + "ln1.b"], cfg.ln_eps)
    h = T.dropout(multi_head(h, params, pre + "attn.", cfg.n_heads), cfg.dropout, rng, training)
    x1 = T.add(x, h)
    h = T.layer_norm(x1, params[pre + "ln2.g"], params[pre + "ln2.b"], cfg.ln_eps)
    h = T.gelu(T.linear(h, params[pre + "ffn.W1"], params[pre + "ffn.b1"]))
    h = T.linear(h, params[pre + "ffn.W2"], params[pre + "ffn.b2"])
    return T.add(x1, T.dropout(h, cfg.dropout, rng, training))


def vit_forward(img, params: dict, cfg: VitConfig, training=False, rng=None, with_pos=True) -> Tensor:
    """Predictions ``(B, n_tasks)`` in normalized label space, columns in ``TASKS`` order.

    Raises :class:`~frftvit.nn.tensor.NumericalError` naming the layer where
    a non-finite activation first appears.
    """
    x = T.check_finite(patch_embed(img, params, cfg, with_pos), "patch_embed")
    x = T.dropout(x, cfg.dropout, rng, training)
    for i in range(cfg.n_layers):
        x = T.check_finite(encoder_block(x, params, i, cfg, training, rng), i)
    b = x.shape[0]
    x = T.gelu(T.linear(T.reshape(x, (b, -1)), params["dense.W"], params["dense.b"]))
    x = T.check_finite(T.dropout(x, cfg.dropout, rng, training), "dense")
    heads = [T.linear(x, params[f"head.{t}.W"], params[f"head.{t}.b"]) for t in TASKS[: cfg.n_tasks]]
    return T.concatenate(heads, axis=-1)
