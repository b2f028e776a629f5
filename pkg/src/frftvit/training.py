"""Mini-batch Adam training with early stopping, plus model loading for inference."""

from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import config as C
from .dataset import Dataset
from .nn.checkpoint import load_checkpoint, save_checkpoint
from .nn.dnn import dnn_forward, init_dnn
from .nn.losses import task_losses, total_loss
from .nn.optim import AdamState, adam_step, zero_grads
from .nn.vit import TASKS, init_vit, vit_forward

EVAL_BATCH = 64


class TrainingError(RuntimeError):
    pass


@dataclass
class Model:
    kind: str
    cfg: object
    params: dict
    buffers: dict = field(default_factory=dict)

    def forward(self, x, training=False, rng=None):
        if self.kind == "vit":
            return vit_forward(x, self.params, self.cfg, training=training, rng=rng)
        return dnn_forward(x, self.params, self.cfg, self.buffers, training=training)

    @property
    def dtype(self):
        return next(iter(self.params.values())).dtype

    def predict(self, images: np.ndarray, batch: int = EVAL_BATCH) -> np.ndarray:
        """Normalized-space predictions ``(n, 4)`` in eval mode."""
        out = []
        for lo in range(0, len(images), batch):
            out.append(self.forward(np.asarray(images[lo : lo + batch], dtype=self.dtype)).value)
        return np.concatenate(out).astype(float) if out else np.zeros((0, 4))


def build_model(cfg: dict, kind: str | None = None, dtype=None) -> Model:
    kind = kind or cfg["train"]["model"]
    dtype = np.dtype(dtype or cfg["train"]["dtype"])
    seed = int(cfg["train"]["seed"])
    if kind == "vit":
        mcfg = C.vit_config(cfg)
        return Model("vit", mcfg, init_vit(mcfg, seed, dtype))
    if kind == "dnn":
        mcfg = C.dnn_config(cfg)
        params, buffers = init_dnn(mcfg, seed, dtype)
        return Model("dnn", mcfg, params, buffers)
    raise ValueError(f"unknown model kind {kind!r}")


def load_model(path, dtype=np.float32):
    """Returns ``(model, meta)`` from a checkpoint directory."""
    arrays, buffers, meta = load_checkpoint(path)
    cfg = meta["config"]
    model = build_model(cfg, meta["model"], dtype)
    if set(arrays) != set(model.params):
        raise ValueError("checkpoint parameters do not match the model config")
    for k, p in model.params.items():
        if arrays[k].shape != p.shape:
            raise ValueError(f"shape mismatch for {k}")
        p.value = arrays[k].astype(dtype)
    for k in model.buffers:
        model.buffers[k] = buffers[k].astype(dtype)
    return model, meta


def _val_metrics(model: Model, x, y, weights):
    pred = model.predict(x)
    per_task = {t: float(np.mean(np.abs(pred[:, k] - y[:, k]))) for k, t in enumerate(TASKS)}
    total = sum(weights.for_task(t) * per_task[t] for t in TASKS)
    return total, per_task


def _blas_threads():
    try:
        from threadpoolctl import threadpool_info
    except ImportError:
        return None
    return [i.get("num_threads") for i in threadpool_info()]


@dataclass
class TrainResult:
    checkpoint: Path
    curve: list
    best_epoch: int
    initial_val: dict
    stopped_early: bool


def train(dataset, cfg: dict | None = None, out_dir=None, kind: str | None = None, epochs: int | None = None,
          log=None) -> TrainResult:
    """Train on the dataset's train split, select on validation total loss.

    Writes ``checkpoint/`` (best-on-validation weights), ``loss_curve.csv``
    (one row per completed epoch) and ``run_info.json`` (timing only) to
    ``out_dir``. Labels are scaled to [0, 1] with the dataset's windows.
    """
    ds = dataset if isinstance(dataset, Dataset) else Dataset(dataset)
    cfg = cfg or ds.config
    tc = cfg["train"]
    kind = kind or tc["model"]
    epochs = int(epochs or tc["epochs"])
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for name in ("train", "val", "test"):
        if len(ds.split(name)) == 0:
            raise TrainingError(f"dataset has an empty {name} split")

    scaler = C.LabelScaler.from_config(ds.config)
    weights = C.task_weights(cfg)
    model = build_model(cfg, kind)
    dtype = model.dtype
    tr, va = ds.split("train"), ds.split("val")
    x_tr = ds.images(tr).astype(dtype)
    y_tr = scaler.normalize(ds.labels[tr]).astype(dtype)
    x_va = ds.images(va).astype(dtype)
    y_va = scaler.normalize(ds.labels[va])
    state = AdamState(lr=tc["lr"], beta1=tc["beta1"], beta2=tc["beta2"], eps=tc["eps"])
    seed = int(tc["seed"])
    bs = int(tc["batch_size"])

    init_total, init_tasks = _val_metrics(model, x_va, y_va, weights)
    initial_val = {"total": init_total, **init_tasks}
    best = (np.inf, 0, None, None)
    wait = 0
    curve = []
    stopped = False
    t0 = time.time()
    for epoch in range(1, epochs + 1):
        rng = np.random.default_rng(np.random.SeedSequence([seed, epoch]))
        perm = rng.permutation(len(tr))
        batches = [perm[i : i + bs] for i in range(0, len(perm), bs)]
        if len(batches) > 1 and len(batches[-1]) < 2:
            batches[-2] = np.concatenate(batches[-2:])
            batches.pop()
        run_loss, seen = 0.0, 0
        for b, idx in enumerate(batches):
            zero_grads(model.params)
            pred = model.forward(x_tr[idx], training=True, rng=rng)
            losses = task_losses(pred, y_tr[idx])
            loss = total_loss(losses, weights)
            if not np.isfinite(loss.value):
                bad = [t for t in TASKS if not np.isfinite(losses[t].value)]
                raise TrainingError(f"non-finite loss at epoch {epoch}, batch {b}, task(s) {bad or TASKS}")
            loss.backward()
            adam_step(model.params, None, state)
            run_loss += float(loss.value) * len(idx)
            seen += len(idx)
        val_total, val_tasks = _val_metrics(model, x_va, y_va, weights)
        row = {"epoch": epoch, "train_loss": run_loss / seen, "val_loss": val_total,
               **{f"val_mae_{t}": v for t, v in val_tasks.items()}}
        curve.append(row)
        if log:
            log(row)
        if val_total < best[0]:
            best = (val_total, epoch, {k: p.value.copy() for k, p in model.params.items()},
                    {k: v.copy() for k, v in model.buffers.items()})
            wait = 0
        else:
            wait += 1
            if wait >= tc["patience"]:
                stopped = True
                break

    _, best_epoch, best_params, best_buffers = best
    meta = {
        "model": kind,
        "config": cfg,
        "model_config": model.cfg.to_dict(),
        "windows": ds.config["windows"],
        "label_keys": list(C.LABEL_KEYS),
        "image_shape": ds.manifest["image_shape"],
        "best_epoch": best_epoch,
        "epochs_run": len(curve),
        "initial_val": initial_val,
    }
    ckpt = save_checkpoint(out / "checkpoint", best_params, meta, best_buffers)
    with open(out / "loss_curve.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(curve[0]))
        w.writeheader()
        for row in curve:
            w.writerow({k: (f"{v:.9g}" if isinstance(v, float) else v) for k, v in row.items()})
    (out / "run_info.json").write_text(json.dumps(
        {"elapsed_s": time.time() - t0, "blas_threads": _blas_threads(), "dtype": str(dtype)}, indent=2))
    return TrainResult(ckpt, curve, best_epoch, initial_val, stopped)


def read_curve(path) -> list:
    with open(path) as fh:
        return [{k: (int(v) if k == "epoch" else float(v)) for k, v in row.items()} for row in csv.DictReader(fh)]

