#!/usr/bin/env python3
"""One-command synthetic experiment: data, training, prediction, scoring.

Chains the osmsl CLI subcommands so the whole pipeline reproduces with a
single invocation.  Everything lands under --out-dir: corpus splits, the
checkpoint with its resolved config, loss curves (CSV and SVG), test-split
predictions, and the evaluation report.
"""

from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

from osmsl.cli import main as osmsl


def main(argv: list[str] | None = None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out-dir", required=True)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--epochs", type=int, default=30)
    ap.add_argument("--lr", type=float, default=4e-3)
    ap.add_argument(
        "--head", default="osmsl", choices=("osmsl", "multitask", "twostage")
    )
    ap.add_argument("--threads", type=int, default=1)
    args = ap.parse_args(argv)

    out = Path(args.out_dir)
    corpus = out / "corpus"
    t0 = time.perf_counter()
    steps = [
        ["synth", "--out-dir", str(corpus), "--seed", str(args.seed)],
        [
            "train",
            "--features", str(corpus / "train.features.jsonl"),
            "--scenes", str(corpus / "train.scenes.json"),
            "--out", str(out / "model.ckpt"),
            "--head", args.head,
            "--seed", str(args.seed),
            "--epochs", str(args.epochs),
            "--lr", str(args.lr),
            "--threads", str(args.threads),
        ],
        [
            "predict",
            "--features", str(corpus / "test.features.jsonl"),
            "--checkpoint", str(out / "model.ckpt"),
            "--out", str(out / "predictions.json"),
        ],
        [
            "eval",
            "--pred", str(out / "predictions.json"),
            "--gold", str(corpus / "test.scenes.json"),
            "--out", str(out / "report.json"),
        ],
        ["curves", str(out / "curves.csv"), "--out", str(out / "curves.svg")],
    ]
    for step in steps:
        print(f"$ osmsl {' '.join(step)}", file=sys.stderr)
        code = osmsl(step)
        if code != 0:
            return code
    print(f"pipeline done in {time.perf_counter() - t0:.1f}s: {out}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
