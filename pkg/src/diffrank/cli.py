"""Command-line entry point.

Subcommands cover the full workflow: `prepare` parses and normalizes raw
ranking data into binary caches, `train` fits a model, `evaluate` scores
a split and writes a metrics CSV, `infer` dumps per-query rankings,
`diversity` measures ranking variability across repeated sampling runs,
and `gradcheck` runs the numeric integrity suite.

Every command is deterministic given its resolved configuration: metric
CSVs, checkpoints, and logs are byte-stable across reruns with the same
seed. Wall-clock timings appear only on stdout, never inside artifacts.

Exit codes: 0 success, 2 configuration errors, 3 data errors (parse,
validation, cache, artifact incompatibilities), 4 numeric failures,
1 anything else.
"""

from __future__ import annotations

import argparse
import hashlib
import os
import statistics
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .config import PRESETS, RunConfig, apply_overrides, resolve_config
from .errors import (
    ConfigError,
    DataError,
    DiffrankError,
    IncompatibilityError,
    NumericError,
)
from .gradcheck import run_all_checks
from .letor import (
    Dataset,
    cache_read,
    cache_write,
    compute_norm_stats,
    normalize,
    parse_letor,
)
from .metrics import (
    evaluate_dataset,
    evaluate_rankings,
    format_report_table,
    ranking_diversity,
    report_to_csv,
)
from .network import DenoiseModel, feature_only_variant, load_checkpoint
from .sampling import SamplerConfig, rank_query, rank_query_repeated
from .schedule import build_schedule
from .training import fit


# ---------------------------------------------------------------------------
# helpers


def _sha256(path: str) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _read_cache(path: str, role: str) -> Dataset:
    if not path:
        raise ConfigError(f"no {role} cache configured; set the {role}_cache key")
    if not os.path.isfile(path):
        raise DataError(
            f"{role} cache {path} does not exist; run the prepare command first"
        )
    return cache_read(path)


def _resolved(args: argparse.Namespace, flag_keys: dict[str, str]) -> RunConfig:
    """Config from defaults<preset<file<--set, then per-command flags."""
    config = resolve_config(
        preset=getattr(args, "preset", None),
        config_path=getattr(args, "config", None),
        overrides=getattr(args, "set", None) or [],
    )
    overrides = {}
    for attr, key in flag_keys.items():
        value = getattr(args, attr, None)
        if value is not None:
            overrides[key] = str(value)
    if overrides:
        config = apply_overrides(config, overrides)
    return config


def _load_model(path: str) -> DenoiseModel:
    if not os.path.isfile(path):
        raise DataError(f"checkpoint {path} does not exist")
    return load_checkpoint(path)


def _check_feature_width(model: DenoiseModel, ds: Dataset, path: str) -> None:
    if ds.k != model.config.k:
        raise IncompatibilityError(
            f"checkpoint expects {model.config.k} features, {path} has {ds.k}"
        )


def _write_text(path: str, text: str) -> None:
    parent = os.path.dirname(path)
    if parent:
        os.makedirs(parent, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)


# ---------------------------------------------------------------------------
# prepare


def _describe_split(name: str, ds: Dataset, cache_path: str) -> str:
    labels = np.array([doc.label for doc in ds.iter_docs()], dtype=np.int64)
    lengths = np.array(sorted(len(g.docs) for g in ds.groups), dtype=np.int64)
    hist = " ".join(
        f"{grade}:{int((labels == grade).sum())}" for grade in range(int(labels.max()) + 1)
    )
    pct = {
        "min": lengths[0],
        "p25": int(np.percentile(lengths, 25)),
        "p50": int(np.percentile(lengths, 50)),
        "p75": int(np.percentile(lengths, 75)),
        "p90": int(np.percentile(lengths, 90)),
        "max": lengths[-1],
    }
    length_line = "  ".join(f"{k} {v}" for k, v in pct.items())
    return (
        f"split {name}: {ds.num_queries} queries, {ds.num_docs} documents, "
        f"{ds.k} features\n"
        f"  label histogram: {hist}\n"
        f"  list lengths: {length_line}\n"
        f"  wrote {cache_path} (sha256 {_sha256(cache_path)})"
    )


def cmd_prepare(args: argparse.Namespace) -> int:
    os.makedirs(args.out_dir, exist_ok=True)
    train_raw = parse_letor(args.train, k_hint=args.k_hint)
    stats = compute_norm_stats(train_raw)
    splits = [("train", train_raw)]
    for name, path in (("valid", args.valid), ("test", args.test)):
        if path is not None:
            splits.append((name, parse_letor(path, k_hint=train_raw.k)))
    for name, raw in splits:
        if raw.k != train_raw.k:
            raise IncompatibilityError(
                f"{name} split has {raw.k} features, train has {train_raw.k}"
            )
        ds = normalize(raw, stats)
        cache_path = os.path.join(args.out_dir, f"{name}.cache")
        cache_write(ds, cache_path)
        print(_describe_split(name, ds, cache_path))
    return 0


# ---------------------------------------------------------------------------
# train


def cmd_train(args: argparse.Namespace) -> int:
    config = _resolved(
        args,
        {"train_cache": "train_cache", "valid_cache": "valid_cache", "out_dir": "out_dir"},
    )
    train_ds = _read_cache(config["train_cache"], "train")
    valid_ds = _read_cache(config["valid_cache"], "valid")
    k = train_ds.k if config["k"] == 0 else None
    train_config = config.train_config(k)
    out_dir = config["out_dir"]
    os.makedirs(out_dir, exist_ok=True)
    snapshot_path = os.path.join(out_dir, "config.txt")
    _write_text(snapshot_path, config.snapshot_text())
    print(
        f"training on {train_ds.num_queries} queries "
        f"({train_ds.num_docs} documents, {train_ds.k} features), "
        f"validating on {valid_ds.num_queries} queries"
    )
    print(f"resolved configuration saved to {snapshot_path}")
    result = fit(train_ds, valid_ds, train_config, out_dir)
    print(f"best validation ndcg@10: {result.best_metric:.6f}")
    print(f"best checkpoint: {result.best_path}")
    print(f"epoch log: {result.log_path} ({len(result.log)} entries)")
    return 0


# ---------------------------------------------------------------------------
# evaluate


def _per_query_rngs(seed: int, ds: Dataset) -> dict[int, np.random.Generator]:
    children = np.random.SeedSequence(seed).spawn(len(ds.groups))
    return {g.qid: np.random.default_rng(c) for g, c in zip(ds.groups, children)}


def cmd_evaluate(args: argparse.Namespace) -> int:
    config = _resolved(args, {"test_cache": "test_cache", "out_dir": "out_dir"})
    model = _load_model(args.checkpoint)
    ds = _read_cache(config["test_cache"], "test")
    _check_feature_width(model, ds, config["test_cache"])
    table = build_schedule(model.schedule)
    sampler = SamplerConfig(
        reverse_steps=config["reverse_steps"],
        seed=config["seed"],
        zero_variance=config["zero_variance"],
    )
    rngs = _per_query_rngs(config["seed"], ds)

    def ranker(group):
        out = rank_query(
            model, group.feature_matrix(), table, sampler, rng=rngs[group.qid]
        )
        return out.scores

    report = evaluate_dataset(
        ds, ranker, cutoffs=config["cutoffs"], workers=config["workers"]
    )
    csv_path = args.out or os.path.join(config["out_dir"], "metrics.csv")
    _write_text(csv_path, report_to_csv(report))
    print(format_report_table(report))
    print(f"metrics written to {csv_path}")
    return 0


# ---------------------------------------------------------------------------
# infer


def cmd_infer(args: argparse.Namespace) -> int:
    config = _resolved(args, {"cache": "test_cache", "out_dir": "out_dir"})
    model = _load_model(args.checkpoint)
    ds = _read_cache(config["test_cache"], "test")
    _check_feature_width(model, ds, config["test_cache"])
    table = build_schedule(model.schedule)
    sampler = SamplerConfig(
        reverse_steps=config["reverse_steps"],
        seed=config["seed"],
        zero_variance=config["zero_variance"],
    )
    rngs = _per_query_rngs(config["seed"], ds)
    lines = ["qid,rank,doc_index,score"]
    for group in ds.groups:
        out = rank_query(
            model, group.feature_matrix(), table, sampler, rng=rngs[group.qid]
        )
        doc_indices = group.doc_indices()
        for rank, position in enumerate(out.order, start=1):
            lines.append(
                f"{group.qid},{rank},{doc_indices[position]},"
                f"{float(out.scores[position])!r}"
            )
    csv_path = args.out or os.path.join(config["out_dir"], "rankings.csv")
    _write_text(csv_path, "\n".join(lines) + "\n")
    print(f"ranked {ds.num_queries} queries ({ds.num_docs} documents)")
    print(f"rankings written to {csv_path}")
    return 0


# ---------------------------------------------------------------------------
# diversity


def cmd_diversity(args: argparse.Namespace) -> int:
    config = _resolved(
        args,
        {"test_cache": "test_cache", "out_dir": "out_dir", "repeat": "repeat"},
    )
    model = _load_model(args.checkpoint)
    ds = _read_cache(config["test_cache"], "test")
    _check_feature_width(model, ds, config["test_cache"])
    table = build_schedule(model.schedule)
    if args.baseline:
        # reference scorer: predictions ignore the noisy labels, one
        # variance-free step, so all repeats produce the same ranking
        model = feature_only_variant(model)
        sampler = SamplerConfig(
            reverse_steps=1, seed=config["seed"], zero_variance=True
        )
    else:
        sampler = SamplerConfig(
            reverse_steps=config["reverse_steps"],
            seed=config["seed"],
            zero_variance=config["zero_variance"],
        )
    repeats = config["repeat"]
    if repeats < 1:
        raise ConfigError(f"repeat must be at least 1, got {repeats}")
    cutoffs = config["rsd_cutoffs"]

    def run_group(group):
        outs = rank_query_repeated(
            model, group.feature_matrix(), table, sampler, repeats=repeats
        )
        return [o.order for o in outs]

    if config["workers"] > 1:
        with ThreadPoolExecutor(max_workers=config["workers"]) as pool:
            per_query_orders = list(pool.map(run_group, ds.groups))
    else:
        per_query_orders = [run_group(g) for g in ds.groups]

    labels_list = [g.labels() for g in ds.groups]
    # exact-rational mean: identical repeated rankings must report the
    # floor value 1/repeats without floating-point drift
    rsd = {
        k: float(
            statistics.mean(ranking_diversity(orders, k) for orders in per_query_orders)
        )
        for k in cutoffs
    }
    per_run_ndcg = {k: [] for k in cutoffs}
    for m in range(repeats):
        report = evaluate_rankings(
            labels_list, [orders[m] for orders in per_query_orders], cutoffs=cutoffs
        )
        for k in cutoffs:
            per_run_ndcg[k].append(report.values["ndcg"][k])

    # exact rational aggregation again: M identical runs must report a
    # mean equal to the common value and a spread of exactly zero
    ndcg_mean = {k: float(statistics.mean(per_run_ndcg[k])) for k in cutoffs}
    ndcg_std = {
        k: float(statistics.pstdev(per_run_ndcg[k])) if repeats > 1 else 0.0
        for k in cutoffs
    }
    lines = ["metric,k,value"]
    rows = [f"{'':<12}" + "".join(f"{f'@{k}':>10}" for k in cutoffs)]
    if repeats > 1:
        for k in cutoffs:
            lines.append(f"rsd,{k},{rsd[k]!r}")
        rows.append(
            f"{'rsd':<12}" + "".join(f"{rsd[k]:>10.4f}" for k in cutoffs)
        )
    for k in cutoffs:
        lines.append(f"ndcg_mean,{k},{ndcg_mean[k]!r}")
    rows.append(
        f"{'ndcg mean':<12}"
        + "".join(f"{ndcg_mean[k]:>10.4f}" for k in cutoffs)
    )
    if repeats > 1:
        for k in cutoffs:
            lines.append(f"ndcg_std,{k},{ndcg_std[k]!r}")
        rows.append(
            f"{'ndcg std':<12}"
            + "".join(f"{ndcg_std[k]:>10.4f}" for k in cutoffs)
        )
    csv_path = args.out or os.path.join(config["out_dir"], "diversity.csv")
    _write_text(csv_path, "\n".join(lines) + "\n")
    mode = "reference scorer" if args.baseline else "sampling model"
    print(f"{mode}: {repeats} repeated runs over {ds.num_queries} queries")
    print("\n".join(rows))
    print(f"diversity report written to {csv_path}")
    return 0


# ---------------------------------------------------------------------------
# gradcheck


def cmd_gradcheck(args: argparse.Namespace) -> int:
    results = run_all_checks(
        seed=args.seed,
        op_trials=args.op_trials,
        loss_trials=args.loss_trials,
        model_directions=args.directions,
    )
    width = max(len(r.name) for r in results)
    failures = 0
    for r in results:
        status = "ok" if r.passed else "FAIL"
        failures += 0 if r.passed else 1
        print(f"{r.name:<{width}}  worst {r.worst:.3e}  tol {r.tol:g}  {status}")
    print(f"{len(results) - failures}/{len(results)} checks passed")
    return 0 if failures == 0 else 1


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="diffrank",
        description="Train and evaluate a denoising-diffusion ranking model.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    shared = argparse.ArgumentParser(add_help=False)
    shared.add_argument("--config", help="key=value config file")
    shared.add_argument(
        "--preset", choices=sorted(PRESETS), help="named configuration preset"
    )
    shared.add_argument(
        "--set",
        action="append",
        metavar="KEY=VALUE",
        help="override one config key (repeatable)",
    )

    p = sub.add_parser("prepare", help="parse, normalize, and cache ranking data")
    p.add_argument("--train", required=True, help="training split in SVMLight format")
    p.add_argument("--valid", help="validation split")
    p.add_argument("--test", help="test split")
    p.add_argument("--out-dir", required=True, help="directory for the caches")
    p.add_argument("--k-hint", type=int, help="minimum feature count")
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("train", parents=[shared], help="fit a model on cached data")
    p.add_argument("--train-cache", help="training cache path")
    p.add_argument("--valid-cache", help="validation cache path")
    p.add_argument("--out-dir", help="run directory for checkpoint and logs")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser(
        "evaluate", parents=[shared], help="compute ranking metrics on a split"
    )
    p.add_argument("--checkpoint", required=True, help="model checkpoint")
    p.add_argument("--test-cache", help="evaluation cache path")
    p.add_argument("--out-dir", help="directory for the metrics CSV")
    p.add_argument("--out", help="metrics CSV path")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("infer", parents=[shared], help="write per-query rankings")
    p.add_argument("--checkpoint", required=True, help="model checkpoint")
    p.add_argument("--cache", help="input cache path")
    p.add_argument("--out-dir", help="directory for the rankings CSV")
    p.add_argument("--out", help="rankings CSV path")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser(
        "diversity",
        parents=[shared],
        help="measure ranking variability across repeated runs",
    )
    p.add_argument("--checkpoint", required=True, help="model checkpoint")
    p.add_argument("--test-cache", help="evaluation cache path")
    p.add_argument("--out-dir", help="directory for the diversity CSV")
    p.add_argument("--out", help="diversity CSV path")
    p.add_argument("--repeat", type=int, help="number of repeated runs")
    p.add_argument(
        "--baseline",
        action="store_true",
        help="use the deterministic reference scorer instead of sampling",
    )
    p.set_defaults(func=cmd_diversity)

    p = sub.add_parser("gradcheck", help="run the numeric integrity suite")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--op-trials", type=int, default=5)
    p.add_argument("--loss-trials", type=int, default=20)
    p.add_argument("--directions", type=int, default=8)
    p.set_defaults(func=cmd_gradcheck)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except (DataError, IncompatibilityError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 3
    except NumericError as e:
        print(f"error: {e}", file=sys.stderr)
        return 4
    except DiffrankError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
