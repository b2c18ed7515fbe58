#!/usr/bin/env python3
"""Write a small synthetic ranking corpus in SVMLight/LETOR text format.

Produces train/valid/test splits from one of the two built-in synthetic
families so the command-line workflow can be exercised without any
external dataset:

    python3 scripts/make_toy_letor.py --out-dir data/toy
    python3 scripts/make_toy_letor.py --out-dir data/toy-context --family context
"""

from __future__ import annotations

import argparse
import os

from diffrank import make_context_dataset, make_linear_dataset, write_letor

FAMILIES = {"linear": make_linear_dataset, "context": make_context_dataset}


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out-dir", required=True, help="directory for the three .txt splits")
    parser.add_argument("--queries", type=int, default=50, help="queries per split")
    parser.add_argument("--docs", type=int, default=20, help="documents per query")
    parser.add_argument("--features", type=int, default=10, help="feature dimensions")
    parser.add_argument("--seed", type=int, default=0, help="base seed; splits use seed, seed+1, seed+2")
    parser.add_argument(
        "--family",
        choices=sorted(FAMILIES),
        default="linear",
        help="linear: pointwise-learnable labels; context: labels depend on the whole list",
    )
    args = parser.parse_args()

    make = FAMILIES[args.family]
    os.makedirs(args.out_dir, exist_ok=True)
    for offset, split in enumerate(("train", "valid", "test")):
        ds = make(args.queries, args.docs, args.features, seed=args.seed + offset)
        path = os.path.join(args.out_dir, f"{split}.txt")
        write_letor(ds, path)
        print(f"wrote {path}: {ds.num_queries} queries, {ds.num_docs} documents, k={ds.k}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
