#!/usr/bin/env python3
"""Head-to-head comparison of the three training frameworks.

Trains the one-stage link-tag model, the multi-task baseline, and the
two-stage baseline on one synthetic corpus with identical trunk settings,
then prints a held-out results table.  With --out-dir, also writes each
head's loss curves and a combined results.json.
"""

from __future__ import annotations

import argparse
import json
import time
from pathlib import Path

import torch

from osmsl.baselines import train_multitask, train_twostage
from osmsl.synth import SynthConfig, generate_corpus, split_corpus
from osmsl.train import TrainConfig, evaluate_model, train_osmsl

TRAINERS = {
    "osmsl": train_osmsl,
    "multitask": train_multitask,
    "twostage": train_twostage,
}


def main(argv: list[str] | None = None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--epochs", type=int, default=30)
    ap.add_argument("--lr", type=float, default=4e-3)
    ap.add_argument("--threads", type=int, default=1)
    ap.add_argument("--out-dir", help="write curves and results.json here")
    args = ap.parse_args(argv)

    torch.set_num_threads(args.threads)
    train, _, test = split_corpus(generate_corpus(SynthConfig(seed=args.seed)), seed=args.seed)
    out = Path(args.out_dir) if args.out_dir else None
    if out:
        out.mkdir(parents=True, exist_ok=True)

    rows: dict[str, dict] = {}
    for name, trainer in TRAINERS.items():
        cfg = TrainConfig(
            seed=args.seed, epochs=args.epochs, lr=args.lr, threads=args.threads
        )
        t0 = time.perf_counter()
        model, curve = trainer(train, cfg)
        seconds = time.perf_counter() - t0
        report = evaluate_model(model, test)
        rows[name] = {"train_seconds": round(seconds, 2), **report.to_doc()}
        if out:
            curve.to_csv(out / f"{name}.curves.csv")

    header = f"{'head':<10} {'seg F1':>8} {'micro F1':>9} {'macro F1':>9} {'train s':>8}"
    print(header)
    print("-" * len(header))
    for name, doc in rows.items():
        print(
            f"{name:<10} {doc['seg']['f1']:>8.4f} {doc['seg_cls_micro']['f1']:>9.4f} "
            f"{doc['seg_cls_macro']['f1']:>9.4f} {doc['train_seconds']:>8.1f}"
        )
    if out:
        results = out / "results.json"
        results.write_text(json.dumps(rows, indent=2) + "\n")
        print(f"results: {results}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
