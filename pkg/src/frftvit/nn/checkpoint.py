"""Checkpoints: ``manifest.json`` plus one little-endian float32 blob per array."""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

CHECKPOINT_VERSION = 1


def _safe(name: str) -> str:
    return name.replace("/", "_") + ".f32"


def save_checkpoint(path, params: dict, meta: dict | None = None, buffers: dict | None = None) -> Path:
    """Write arrays (Tensors or ndarrays) under directory ``path``."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    entries = []
    for kind, group in (("param", params), ("buffer", buffers or {})):
        for name, arr in group.items():
            a = np.ascontiguousarray(getattr(arr, "value", arr), dtype="<f4")
            blob = a.tobytes()
            fname = _safe(f"{kind}.{name}")
            (path / fname).write_bytes(blob)
            entries.append({"name": name, "kind": kind, "shape": list(a.shape), "file": fname,
                            "sha256": hashlib.sha256(blob).hexdigest()})
    manifest = {"version": CHECKPOINT_VERSION, "arrays": entries, "meta": meta or {}}
    (path / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return path


def load_checkpoint(path):
    """Returns ``(params, buffers, meta)`` with float32 arrays."""
    path = Path(path)
    manifest = json.loads((path / "manifest.json").read_text())
    if manifest.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {manifest.get('version')!r}")
    params, buffers = {}, {}
    for e in manifest["arrays"]:
        blob = (path / e["file"]).read_bytes()
        if hashlib.sha256(blob).hexdigest() != e["sha256"]:
            raise ValueError(f"checksum mismatch for {e['name']}")
        arr = np.frombuffer(blob, dtype="<f4").reshape(e["shape"]).copy()
        (params if e["kind"] == "param" else buffers)[e["name"]] = arr
    return params, buffers, manifest["meta"]
