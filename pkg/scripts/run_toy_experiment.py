#!/usr/bin/env python3
"""End-to-end toy experiment: data -> caches -> training -> reports.

Drives the same command-line entry points a user would run by hand, on a
synthetic corpus small enough to finish in well under a minute:

    python3 scripts/run_toy_experiment.py --work-dir /tmp/toy

The work directory ends up with the raw text splits, binary caches, the
training run (checkpoint, config snapshot, epoch log), a ranking-metrics
CSV, and a repeated-run diversity CSV.
"""

from __future__ import annotations

import argparse
import os
import sys

from diffrank import make_linear_dataset, write_letor
from diffrank.cli import main as cli_main


def run(argv: list[str]) -> None:
    print(f"$ diffrank {' '.join(argv)}")
    code = cli_main(argv)
    if code != 0:
        raise SystemExit(code)


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--work-dir", default="toy_run", help="directory for all artifacts")
    parser.add_argument("--queries", type=int, default=50, help="queries per split")
    parser.add_argument("--epochs", type=int, default=40, help="training epochs")
    parser.add_argument("--timesteps", type=int, default=200, help="noising horizon")
    parser.add_argument("--seed", type=int, default=0, help="experiment seed")
    args = parser.parse_args()

    work = os.path.abspath(args.work_dir)
    raw = os.path.join(work, "raw")
    caches = os.path.join(work, "caches")
    run_dir = os.path.join(work, "run")
    os.makedirs(raw, exist_ok=True)

    for offset, split in enumerate(("train", "valid", "test")):
        ds = make_linear_dataset(args.queries, 20, 10, seed=args.seed + offset)
        write_letor(ds, os.path.join(raw, f"{split}.txt"))

    run([
        "prepare",
        "--train", os.path.join(raw, "train.txt"),
        "--valid", os.path.join(raw, "valid.txt"),
        "--test", os.path.join(raw, "test.txt"),
        "--out-dir", caches,
    ])
    settings = [
        "--set", f"timesteps={args.timesteps}",
        "--set", "d_model=64",
        "--set", "blocks=3",
        "--set", f"epochs={args.epochs}",
        "--set", f"seed={args.seed}",
    ]
    run([
        "train",
        "--train-cache", os.path.join(caches, "train.cache"),
        "--valid-cache", os.path.join(caches, "valid.cache"),
        "--out-dir", run_dir,
        *settings,
    ])
    checkpoint = os.path.join(run_dir, "best.ckpt")
    run([
        "evaluate",
        "--checkpoint", checkpoint,
        "--test-cache", os.path.join(caches, "test.cache"),
        "--out", os.path.join(work, "metrics.csv"),
        *settings,
    ])
    run([
        "diversity",
        "--checkpoint", checkpoint,
        "--test-cache", os.path.join(caches, "test.cache"),
        "--out", os.path.join(work, "diversity.csv"),
        "--repeat", "10",
        *settings,
    ])
    run([
        "diversity",
        "--checkpoint", checkpoint,
        "--test-cache", os.path.join(caches, "test.cache"),
        "--out", os.path.join(work, "diversity_baseline.csv"),
        "--repeat", "10",
        "--baseline",
        *settings,
    ])
    print(f"\nartifacts in {work}: run/, metrics.csv, diversity.csv, diversity_baseline.csv")
    return 0


if __name__ == "__main__":
    sys.exit(main())
