"""Dataset generation and the on-disk store.

Layout of a dataset directory::

    manifest.json   config snapshot, splits, one record per sample
    images.bin      float32 LE, per sample (n_pol, size, size), planes x then y
    labels.bin      float32 LE, per sample (SNR_NL, OSNR, CD, DGD) physical units
    ts_rx.bin       complex128 LE, per sample the received TS (n_pol, 2*ts_symbols)

Every sample is a pure function of ``(config, master_seed, index)``: the
draws for attempt ``k`` come from ``SeedSequence([master_seed, index, k])``,
so the store is identical for any worker count.
"""

from __future__ import annotations

import hashlib
import json
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import config as C
from .channel import PmdConfig, run_link
from .rxdsp import receive, snr_breakdown
from .signals import build_transmitter, extract_ts
from .tfimage import TfImage, build_sinogram, inverse_radon

DATASET_VERSION = 1
SPLIT_SALT = 0x5B17


class DatasetError(RuntimeError):
    pass


@dataclass
class Sample:
    index: int
    attempts: int
    labels: np.ndarray
    image: TfImage
    ts_rx: np.ndarray
    record: dict


def _draw(cfg: dict, rng: np.random.Generator) -> dict:
    s = cfg["sampling"]
    return {
        "osnr_db": float(rng.uniform(*s["osnr_db"])),
        "mean_dgd_ps": float(rng.uniform(*s["mean_dgd_ps"])),
        "spans": int(rng.integers(s["spans"][0], s["spans"][1] + 1)),
        "launch_power_dbm": float(s["launch_powers_dbm"][rng.integers(len(s["launch_powers_dbm"]))]),
        "n_channels": int(s["n_channels"][rng.integers(len(s["n_channels"]))]),
        "link_seed": int(rng.integers(2**31)),
        "pmd_seed": int(rng.integers(2**31)),
        "tx_seed": int(rng.integers(2**31)),
    }


def image_from_ts(ts_rx: np.ndarray, cfg: dict) -> TfImage:
    """Feature image from the received TS only."""
    f = cfg["features"]
    sino = build_sinogram(ts_rx, C.feature_orders(cfg), f["image_size"])
    return inverse_radon(sino, f["image_size"], f["normalize"])


def in_windows(labels, cfg: dict) -> bool:
    w = cfg["windows"]
    return all(w[k][0] <= v <= w[k][1] for k, v in zip(C.LABEL_KEYS, labels))


def simulate_sample(cfg: dict, index: int, master_seed: int) -> Sample:
    """Draw, simulate and label one sample, redrawing when labels leave the windows."""
    layout = C.frame_layout(cfg)
    rcv = cfg["receiver"]
    for attempt in range(cfg["dataset"]["max_attempts"]):
        rng = np.random.default_rng(np.random.SeedSequence([int(master_seed), int(index), attempt]))
        d = _draw(cfg, rng)
        link = C.link_config(
            cfg,
            n_channels=d["n_channels"],
            spans=d["spans"],
            launch_power_dbm=d["launch_power_dbm"],
            target_osnr_db=d["osnr_db"],
            pmd=PmdConfig(cfg["link"]["pmd_segments"], d["mean_dgd_ps"], d["pmd_seed"]),
        )
        txs = [build_transmitter(layout, d["tx_seed"] + k, d["launch_power_dbm"]) for k in range(d["n_channels"])]
        real = run_link(link, [t.frame for t in txs], seed=d["link_seed"])
        rx = receive(
            real.received, txs[d["n_channels"] // 2].symbols, layout, real.labels["cd_ps_per_nm"],
            link.wavelength_nm, cma_taps=rcv["cma_taps"], cma_mu=rcv["cma_mu"],
            refine_taps=rcv["refine_taps"], guard=rcv["guard_symbols"],
        )
        sb = snr_breakdown(rx.gsnr_db, d["osnr_db"], link.symbol_rate)
        labels = np.array([sb.snr_nl_db, d["osnr_db"], real.labels["cd_ps_per_nm"], real.labels["dgd_ps"]])
        if not in_windows(labels, cfg):
            continue
        ts_rx = extract_ts(real.received, layout).fields
        image = image_from_ts(ts_rx, cfg)
        record = {
            "index": int(index),
            "seed": [int(master_seed), int(index), attempt],
            "attempts": attempt + 1,
            "labels": dict(zip(C.LABEL_KEYS, (float(v) for v in labels))),
            "gsnr_db": float(sb.gsnr_db),
            "snr_ase_db": float(sb.snr_ase_db),
            "snr_nl_clamped": bool(sb.clamped),
            **{k: d[k] for k in ("mean_dgd_ps", "spans", "launch_power_dbm", "n_channels")},
        }
        return Sample(index, attempt + 1, labels, image, ts_rx, record)
    raise DatasetError(f"sample {index}: no in-window labels after {cfg['dataset']['max_attempts']} attempts")


def split_indices(n: int, fractions, master_seed: int) -> dict:
    """Seeded shuffle into train/val/test with sizes ``round(f*n)`` (test takes the rest)."""
    perm = np.random.default_rng(np.random.SeedSequence([int(master_seed), SPLIT_SALT])).permutation(n)
    n_train = int(round(fractions[0] * n))
    n_val = int(round(fractions[1] * n))
    return {
        "train": sorted(int(i) for i in perm[:n_train]),
        "val": sorted(int(i) for i in perm[n_train : n_train + n_val]),
        "test": sorted(int(i) for i in perm[n_train + n_val :]),
    }


def _simulate_star(args):
    return simulate_sample(*args)


def generate_dataset(cfg: dict, n_samples: int, master_seed: int, out_dir, workers: int | None = None,
                     progress=None) -> dict:
    """Simulate ``n_samples`` samples into ``out_dir``; returns the manifest dict."""
    if n_samples < 10:
        raise ValueError("n_samples must be >= 10")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    workers = int(workers or cfg["dataset"]["workers"])
    jobs = [(cfg, i, master_seed) for i in range(n_samples)]
    size = cfg["features"]["image_size"]
    records = []
    offset = 0
    with open(out / "images.bin", "wb") as fi, open(out / "labels.bin", "wb") as fl, \
            open(out / "ts_rx.bin", "wb") as ft:
        if workers > 1:
            pool = ProcessPoolExecutor(workers)
            results = pool.map(_simulate_star, jobs, chunksize=4)
        else:
            pool = None
            results = map(_simulate_star, jobs)
        try:
            for s in results:
                blob = s.image.to_bytes()
                if len(blob) != 4 * size * size * s.image.shape[-1]:
                    raise DatasetError("image has unexpected size")
                fi.write(blob)
                fl.write(s.labels.astype("<f4").tobytes())
                ft.write(np.ascontiguousarray(s.ts_rx, dtype="<c16").tobytes())
                rec = dict(s.record, image_offset=offset, sha256=hashlib.sha256(blob).hexdigest())
                records.append(rec)
                offset += len(blob)
                if progress:
                    progress(s.index, n_samples)
        finally:
            if pool is not None:
                pool.shutdown()
    joint = Counter((r["launch_power_dbm"], r["spans"]) for r in records)
    manifest = {
        "version": DATASET_VERSION,
        "master_seed": int(master_seed),
        "n_samples": n_samples,
        "config": cfg,
        "image_shape": [cfg["model"]["channels"], size, size],
        "ts_shape": [2, 2 * cfg["layout"]["ts_symbols"]],
        "label_keys": list(C.LABEL_KEYS),
        "splits": split_indices(n_samples, cfg["dataset"]["split"], master_seed),
        "rejected": int(sum(r["attempts"] - 1 for r in records)),
        "joint_power_spans": [
            {"launch_power_dbm": p, "spans": s, "count": c} for (p, s), c in sorted(joint.items())
        ],
        "samples": records,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True))
    return manifest


class Dataset:
    """Read-only view of a dataset directory."""

    def __init__(self, path, verify: bool = True):
        self.path = Path(path)
        try:
            self.manifest = json.loads((self.path / "manifest.json").read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise DatasetError(f"cannot read manifest in {self.path}: {exc}") from exc
        if self.manifest.get("version") != DATASET_VERSION:
            raise DatasetError("unsupported dataset version")
        self.config = self.manifest["config"]
        n = self.manifest["n_samples"]
        c, h, w = self.manifest["image_shape"]
        raw = np.fromfile(self.path / "images.bin", dtype="<f4")
        if raw.size != n * c * h * w:
            raise DatasetError("images.bin size does not match the manifest")
        self._planes = raw.reshape(n, c, h, w)
        self.labels = np.fromfile(self.path / "labels.bin", dtype="<f4").reshape(n, 4).astype(float)
        offsets = [r["image_offset"] for r in self.manifest["samples"]]
        if any(b <= a for a, b in zip(offsets, offsets[1:])):
            raise DatasetError("image offsets must be strictly increasing")
        if verify:
            self.verify()

    def __len__(self):
        return self.manifest["n_samples"]

    @property
    def records(self):
        return self.manifest["samples"]

    def verify(self) -> None:
        for r in self.records:
            blob = self._planes[r["index"]].tobytes()
            if hashlib.sha256(blob).hexdigest() != r["sha256"]:
                raise DatasetError(f"checksum mismatch for sample {r['index']}")

    def images(self, idx=None) -> np.ndarray:
        """``(n, size, size, n_pol)`` float64 images."""
        planes = self._planes if idx is None else self._planes[np.asarray(idx, dtype=int)]
        return np.moveaxis(planes, 1, -1).astype(float)

    def split(self, name: str) -> np.ndarray:
        return np.asarray(self.manifest["splits"][name], dtype=int)

    def ts_rx(self) -> np.ndarray:
        n = len(self)
        p, m = self.manifest["ts_shape"]
        return np.fromfile(self.path / "ts_rx.bin", dtype="<c16").reshape(n, p, m)


def recompute_features(src, out_dir, cfg: dict | None = None) -> dict:
    """Rebuild ``images.bin`` from the stored received TS.

    Reads only ``ts_rx.bin`` and the manifest's feature settings (or
    ``cfg["features"]`` when given); labels are copied through untouched.
    """
    src = Path(src)
    ds = Dataset(src, verify=False)
    use = dict(ds.config)
    if cfg is not None:
        use["features"] = cfg["features"]
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = json.loads(json.dumps(ds.manifest))
    manifest["config"] = use
    offset = 0
    with open(out / "images.bin", "wb") as fi:
        for rec, ts in zip(manifest["samples"], ds.ts_rx()):
            blob = image_from_ts(ts, use).to_bytes()
            fi.write(blob)
            rec["image_offset"] = offset
            rec["sha256"] = hashlib.sha256(blob).hexdigest()
            offset += len(blob)
    size = use["features"]["image_size"]
    manifest["image_shape"] = [manifest["image_shape"][0], size, size]
    if out.resolve() != src.resolve():
        for name in ("labels.bin", "ts_rx.bin"):
            (out / name).write_bytes((src / name).read_bytes())
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True))
    return manifest
