"""JSON configuration: loading, validation, and conversion to runtime objects.

A config file has the sections ``link``, ``layout``, ``sampling``,
``windows``, ``receiver``, ``features``, ``dataset``, ``model``, ``dnn``,
``train`` and ``eval``. Any omitted key falls back to the built-in default
config. ``default``, ``full`` and ``smoke`` name the configs shipped with
the package.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .channel import LinkConfig, PmdConfig
from .frft import scan_orders
from .nn.dnn import DnnConfig
from .nn.losses import TaskWeights
from .nn.vit import VitConfig
from .signals import FrameLayout

CONFIG_VERSION = 1
BUILTIN = ("default", "full", "smoke")
LABEL_KEYS = ("snr_nl_db", "osnr_db", "cd_ps_per_nm", "dgd_ps")


class ConfigError(ValueError):
    """Invalid or inconsistent configuration."""


def _builtin_text(name: str) -> str:
    return resources.files("frftvit").joinpath("configs", f"{name}.json").read_text()


def _merge(base: dict, over: dict, path="") -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if k not in base:
            raise ConfigError(f"unknown config key {path + k!r}")
        if isinstance(base[k], dict) and not isinstance(v, dict):
            raise ConfigError(f"config key {path + k!r} must be an object")
        out[k] = _merge(base[k], v, path + k + ".") if isinstance(base[k], dict) else v
    return out


def load_config(source=None) -> dict:
    """Config dict from a builtin name, a JSON path, a dict, or None (default)."""
    base = json.loads(_builtin_text("default"))
    if source is None:
        raw = {}
    elif isinstance(source, dict):
        raw = source
    elif str(source) in BUILTIN:
        raw = json.loads(_builtin_text(str(source)))
    else:
        try:
            raw = json.loads(Path(source).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {source}: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    cfg = _merge(base, raw)
    validate_config(cfg)
    return cfg


def _range(cfg, section, key, lo_min=None):
    v = cfg[section][key]
    if not (isinstance(v, list) and len(v) == 2 and v[0] <= v[1]):
        raise ConfigError(f"{section}.{key} must be [lo, hi] with lo <= hi")
    if lo_min is not None and v[0] < lo_min:
        raise ConfigError(f"{section}.{key} must start at >= {lo_min}")
    return v


def validate_config(cfg: dict) -> None:
    if cfg.get("version") != CONFIG_VERSION:
        raise ConfigError(f"config version must be {CONFIG_VERSION}")
    _range(cfg, "sampling", "osnr_db")
    _range(cfg, "sampling", "mean_dgd_ps", 0)
    spans = _range(cfg, "sampling", "spans", 1)
    if any(int(s) != s for s in spans):
        raise ConfigError("sampling.spans must be integers")
    for key in ("launch_powers_dbm", "n_channels"):
        if not cfg["sampling"][key]:
            raise ConfigError(f"sampling.{key} must be nonempty")
    for key in LABEL_KEYS:
        lo, hi = _range(cfg, "windows", key)
        if not hi > lo:
            raise ConfigError(f"windows.{key} must have positive width")
    split = cfg["dataset"]["split"]
    if len(split) != 3 or min(split) < 0 or abs(sum(split) - 1) > 1e-9:
        raise ConfigError("dataset.split must be three non-negative fractions summing to 1")
    if cfg["train"]["model"] not in ("vit", "dnn"):
        raise ConfigError("train.model must be 'vit' or 'dnn'")
    if cfg["train"]["dtype"] not in ("float32", "float64"):
        raise ConfigError("train.dtype must be float32 or float64")
    if cfg["train"]["epochs"] < 1 or cfg["train"]["batch_size"] < 2:
        raise ConfigError("train.epochs >= 1 and train.batch_size >= 2 required")
    try:
        link_config(cfg, n_channels=int(cfg["sampling"]["n_channels"][0]))
        frame_layout(cfg)
        vit_config(cfg)
        dnn_config(cfg)
        task_weights(cfg)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    if cfg["link"]["symbol_rate"] != cfg["layout"]["symbol_rate"] or cfg["link"]["rolloff"] != cfg["layout"]["rolloff"]:
        raise ConfigError("link and layout disagree on symbol_rate or rolloff")
    if cfg["features"]["image_size"] != cfg["model"]["image_size"]:
        raise ConfigError("features.image_size and model.image_size differ")


def link_config(cfg: dict, **overrides) -> LinkConfig:
    link = dict(cfg["link"])
    link["pmd"] = PmdConfig(n_segments=int(link.pop("pmd_segments")))
    link.update(overrides)
    return LinkConfig(**link)


def frame_layout(cfg: dict) -> FrameLayout:
    return FrameLayout(**cfg["layout"])


def feature_orders(cfg: dict) -> np.ndarray:
    o = cfg["features"]["orders"]
    return scan_orders(o["step"], o["lo"], o["hi"])


def vit_config(cfg: dict) -> VitConfig:
    return VitConfig(**cfg["model"])


def dnn_config(cfg: dict) -> DnnConfig:
    d = dict(cfg["dnn"])
    d.setdefault("image_size", cfg["model"]["image_size"])
    d.setdefault("channels", cfg["model"]["channels"])
    return DnnConfig(**d)


def task_weights(cfg: dict) -> TaskWeights:
    return TaskWeights(**cfg["train"]["weights"])


@dataclass(frozen=True)
class LabelScaler:
    """Maps physical labels (columns in ``LABEL_KEYS`` order) to [0, 1] and back."""

    lo: np.ndarray
    hi: np.ndarray

    @classmethod
    def from_config(cls, cfg: dict) -> "LabelScaler":
        w = cfg["windows"]
        return cls(np.array([w[k][0] for k in LABEL_KEYS], float), np.array([w[k][1] for k in LABEL_KEYS], float))

    def normalize(self, y):
        return (np.asarray(y, float) - self.lo) / (self.hi - self.lo)

    def denormalize(self, z):
        return np.asarray(z, float) * (self.hi - self.lo) + self.lo


def dump_config(cfg: dict) -> str:
    return json.dumps(cfg, indent=2, sort_keys=True)
