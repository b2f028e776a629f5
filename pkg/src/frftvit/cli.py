"""Command line interface.

Exit codes: 0 success, 1 invalid configuration or usage, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _parser() -> argparse.ArgumentParser:
    p = _Parser(prog="frftvit", description="FrFT time-frequency images and multi-task ViT impairment estimation")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("simulate", help="generate a dataset")
    s.add_argument("--config", default="default", help="JSON path or builtin name (default, full, smoke)")
    s.add_argument("--samples", type=int, help="number of samples (default: from config)")
    s.add_argument("--seed", type=int, default=0, help="master seed")
    s.add_argument("--workers", type=int, help="worker processes")
    s.add_argument("--out", required=True, help="output dataset directory")

    s = sub.add_parser("features", help="recompute images from stored received training sequences")
    s.add_argument("--data", required=True, help="dataset directory")
    s.add_argument("--config", help="take feature settings from this config")
    s.add_argument("--out", required=True, help="output dataset directory")

    s = sub.add_parser("frft", help="fractional Fourier transform of a raw complex64 file")
    s.add_argument("--order", type=float, required=True)
    s.add_argument("--in", dest="inp", required=True, help="little-endian complex64 samples")
    s.add_argument("--out", required=True)

    s = sub.add_parser("train", help="train a model on a dataset")
    s.add_argument("--data", required=True, help="dataset directory")
    s.add_argument("--config", help="config for model/training settings (default: the dataset's)")
    s.add_argument("--model", choices=("vit", "dnn"))
    s.add_argument("--epochs", type=int)
    s.add_argument("--seed", type=int, help="training seed")
    s.add_argument("--out", required=True, help="output run directory")

    s = sub.add_parser("eval", help="evaluate a checkpoint on the test split")
    s.add_argument("--data", required=True)
    s.add_argument("--checkpoint", required=True, help="run directory or its checkpoint/ subdirectory")
    s.add_argument("--split", default="test", choices=("train", "val", "test"))
    s.add_argument("--out", required=True)

    s = sub.add_parser("report", help="summarize an evaluation (and training curves)")
    s.add_argument("--eval", dest="eval_dir", required=True)
    s.add_argument("--train", dest="train_dir")
    s.add_argument("--out", required=True)
    return p


def _run(args) -> None:
    from . import config as C

    if args.command == "simulate":
        from .dataset import generate_dataset

        cfg = C.load_config(args.config)
        n = args.samples if args.samples is not None else cfg["dataset"]["n_samples"]
        if n < 10:
            raise C.ConfigError("--samples must be >= 10")
        m = generate_dataset(cfg, n, args.seed, args.out, workers=args.workers)
        print(f"wrote {m['n_samples']} samples to {args.out} ({m['rejected']} rejected draws)")

    elif args.command == "features":
        from .dataset import recompute_features

        cfg = C.load_config(args.config) if args.config else None
        m = recompute_features(args.data, args.out, cfg)
        print(f"rebuilt {m['n_samples']} images into {args.out}")

    elif args.command == "frft":
        from .frft import frft

        x = np.fromfile(args.inp, dtype="<c8")
        y = frft(x, args.order)
        y.astype("<c8").tofile(args.out)
        print(f"order {args.order} transform of {x.size} samples written to {args.out}")

    elif args.command == "train":
        from .dataset import Dataset
        from .training import train

        ds = Dataset(args.data)
        cfg = C.load_config(args.config) if args.config else json.loads(json.dumps(ds.config))
        if args.seed is not None:
            cfg["train"]["seed"] = args.seed
        res = train(ds, cfg, args.out, kind=args.model, epochs=args.epochs,
                    log=lambda r: print(f"epoch {r['epoch']}: train {r['train_loss']:.4f} val {r['val_loss']:.4f}"))
        print(f"best epoch {res.best_epoch}; checkpoint at {res.checkpoint}")

    elif args.command == "eval":
        from .evaluation import evaluate, write_report

        ckpt = Path(args.checkpoint)
        if (ckpt / "checkpoint").is_dir():
            ckpt = ckpt / "checkpoint"
        rep = evaluate(args.data, ckpt, args.split)
        write_report(rep, args.out)
        for t in rep.tasks:
            print(f"{t['task']}: MAE {t['mae']:.4g} {t['unit']} (predict-mean {t['baseline_mae']:.4g})")

    elif args.command == "report":
        from .evaluation import summarize

        print(summarize(args.eval_dir, args.train_dir, args.out), end="")


def main(argv=None) -> int:
    from .config import ConfigError

    try:
        args = _parser().parse_args(argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SystemExit as exc:  # --help
        return EXIT_OK if exc.code in (0, None) else EXIT_CONFIG
    try:
        _run(args)
    except ConfigError as exc:
        print(f"invalid configuration: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - the CLI maps every failure to an exit code
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
