"""Test-set evaluation: global, segmental and per-launch-power MAE, CSV and SVG output."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import config as C
from .dataset import Dataset
from .training import load_model

UNITS = {"snr_nl_db": "dB", "osnr_db": "dB", "cd_ps_per_nm": "ps/nm", "dgd_ps": "ps"}
TITLES = {"snr_nl_db": "SNR_NL", "osnr_db": "OSNR", "cd_ps_per_nm": "CD", "dgd_ps": "DGD"}


@dataclass
class EvalReport:
    split: str
    n: int
    model: str
    tasks: list          # [{task, unit, mae, baseline_mae}]
    segmental: list      # [{task, bin, lo, hi, count, mae}]
    by_power: list       # [{launch_power_dbm, task, count, mae}]
    truth: np.ndarray
    pred: np.ndarray

    def mae(self, task: str) -> float:
        return next(t["mae"] for t in self.tasks if t["task"] == task)

    def baseline_mae(self, task: str) -> float:
        return next(t["baseline_mae"] for t in self.tasks if t["task"] == task)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["truth"] = self.truth.tolist()
        d["pred"] = self.pred.tolist()
        return d


def segmental_mae(truth, pred, lo: float, hi: float, bins: int = 10) -> list:
    """MAE in ``bins`` equal-width label bins over ``[lo, hi]``; the top edge joins the last bin."""
    truth, pred = np.asarray(truth, float), np.asarray(pred, float)
    edges = np.linspace(lo, hi, bins + 1)
    which = np.clip(np.searchsorted(edges, truth, side="right") - 1, 0, bins - 1)
    out = []
    for b in range(bins):
        m = which == b
        n = int(m.sum())
        out.append({"bin": b, "lo": float(edges[b]), "hi": float(edges[b + 1]), "count": n,
                    "mae": float(np.mean(np.abs(pred[m] - truth[m]))) if n else float("nan")})
    return out


def evaluate(dataset, checkpoint=None, split: str = "test", predictor=None) -> EvalReport:
    """Score a checkpoint (or any ``predictor(images, indices) -> physical labels``).

    The predict-mean baseline uses the mean of the train-split labels.
    """
    ds = dataset if isinstance(dataset, Dataset) else Dataset(dataset)
    idx = ds.split(split)
    if len(idx) == 0:
        raise ValueError(f"{split} split is empty")
    scaler = C.LabelScaler.from_config(ds.config)
    model_name = "stub"
    if predictor is None:
        if checkpoint is None:
            raise ValueError("need a checkpoint or a predictor")
        model, meta = load_model(checkpoint)
        if meta["windows"] != ds.config["windows"] or list(meta["image_shape"]) != list(ds.manifest["image_shape"]):
            raise ValueError("checkpoint was trained for a different label window or image shape")
        model_name = meta["model"]

        def predictor(images, _idx):
            return scaler.denormalize(model.predict(images))

    truth = ds.labels[idx]
    pred = np.asarray(predictor(ds.images(idx), idx), dtype=float)
    if pred.shape != truth.shape:
        raise ValueError("predictor returned the wrong shape")
    base = ds.labels[ds.split("train")].mean(axis=0) if len(ds.split("train")) else truth.mean(axis=0)
    bins = int(ds.config["eval"]["bins"])
    tasks, seg, by_power = [], [], []
    powers = np.array([ds.records[i]["launch_power_dbm"] for i in idx])
    for k, key in enumerate(C.LABEL_KEYS):
        err = np.abs(pred[:, k] - truth[:, k])
        tasks.append({"task": key, "unit": UNITS[key], "mae": float(err.mean()),
                      "baseline_mae": float(np.mean(np.abs(base[k] - truth[:, k])))})
        lo, hi = ds.config["windows"][key]
        for row in segmental_mae(truth[:, k], pred[:, k], lo, hi, bins):
            seg.append({"task": key, **row})
        for p in sorted(set(powers.tolist())):
            m = powers == p
            by_power.append({"launch_power_dbm": float(p), "task": key, "count": int(m.sum()),
                             "mae": float(err[m].mean())})
    return EvalReport(split, len(idx), model_name, tasks, seg, by_power, truth, pred)


def _fmt(v):
    return f"{v:.9g}" if isinstance(v, float) else v


def _write_csv(path: Path, rows: list) -> None:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: _fmt(v) for k, v in r.items()})
    path.write_text(buf.getvalue())


def _svg(fig, path: Path) -> None:
    fig.savefig(path, format="svg", metadata={"Date": None, "Creator": None})


def plot_report(report: EvalReport, path) -> None:
    """Estimates vs truth per task, with the segmental MAE on a twin axis."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plt.rcParams["svg.hashsalt"] = "frftvit"
    fig, axes = plt.subplots(2, 2, figsize=(9, 8))
    for k, (key, ax) in enumerate(zip(C.LABEL_KEYS, axes.ravel())):
        t, p = report.truth[:, k], report.pred[:, k]
        lo, hi = min(t.min(), p.min()), max(t.max(), p.max())
        ax.plot([lo, hi], [lo, hi], color="0.6", lw=1)
        ax.scatter(t, p, s=8, color="tab:blue")
        ax.set_xlabel(f"true {TITLES[key]} ({UNITS[key]})")
        ax.set_ylabel(f"estimated {TITLES[key]} ({UNITS[key]})")
        ax.set_title(f"{TITLES[key]}: MAE {report.mae(key):.3g} {UNITS[key]}")
        segs = [s for s in report.segmental if s["task"] == key and s["count"] > 0]
        ax2 = ax.twinx()
        ax2.bar([(s["lo"] + s["hi"]) / 2 for s in segs], [s["mae"] for s in segs],
                width=(segs[0]["hi"] - segs[0]["lo"]) * 0.8 if segs else 1, alpha=0.3, color="tab:orange")
        ax2.set_ylabel("segmental MAE")
    fig.tight_layout()
    _svg(fig, Path(path))
    plt.close(fig)


def write_report(report: EvalReport, out_dir) -> Path:
    """``mae.csv``, ``segmental.csv``, ``by_power.csv``, ``report.json`` and ``report.svg``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_csv(out / "mae.csv", report.tasks)
    _write_csv(out / "segmental.csv", report.segmental)
    _write_csv(out / "by_power.csv", report.by_power)
    (out / "report.json").write_text(json.dumps(report.to_dict(), indent=1, sort_keys=True))
    plot_report(report, out / "report.svg")
    return out


def load_report(path) -> EvalReport:
    d = json.loads((Path(path) / "report.json").read_text())
    d["truth"] = np.asarray(d["truth"], float)
    d["pred"] = np.asarray(d["pred"], float)
    return EvalReport(**d)


def summarize(eval_dir, train_dir=None, out_dir=None) -> str:
    """Markdown summary of an evaluation (and loss curves when ``train_dir`` is given)."""
    rep = load_report(eval_dir)
    lines = [f"# Evaluation ({rep.model}, {rep.split} split, n={rep.n})", "",
             "| task | MAE | predict-mean MAE | ratio |", "|---|---|---|---|"]
    for t in rep.tasks:
        ratio = t["baseline_mae"] / t["mae"] if t["mae"] > 0 else float("inf")
        lines.append(f"| {TITLES[t['task']]} ({t['unit']}) | {t['mae']:.4g} | {t['baseline_mae']:.4g} | {ratio:.2f} |")
    text = "\n".join(lines) + "\n"
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "summary.md").write_text(text)
        if train_dir is not None:
            from .training import read_curve

            curve = read_curve(Path(train_dir) / "loss_curve.csv")
            import matplotlib

            matplotlib.use("Agg")
            import matplotlib.pyplot as plt

            plt.rcParams["svg.hashsalt"] = "frftvit"
            fig, ax = plt.subplots(figsize=(6, 4))
            ax.plot([r["epoch"] for r in curve], [r["train_loss"] for r in curve], label="train")
            ax.plot([r["epoch"] for r in curve], [r["val_loss"] for r in curve], label="validation")
            ax.set_xlabel("epoch")
            ax.set_ylabel("total loss")
            ax.legend()
            fig.tight_layout()
            _svg(fig, out / "loss_curve.svg")
            plt.close(fig)
    return text
