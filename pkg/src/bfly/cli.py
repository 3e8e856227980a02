"""``bfly`` command line: verify, bench, train, sweep.

Exit codes: 0 success, 1 verification or run failure, 2 usage error.
Every command prints its effective configuration as one ``config:`` JSON
line before doing any work.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_info, threadpool_limits

from . import bench
from .checkpoint import save_checkpoint
from .core import is_power_of_two, make_rng
from .data import DataError, load_cifar10, synthetic_dataset
from .train import METHODS, ModelConfig, TrainConfig, TrainingDiverged, count_params, seeded_model, train_shl
from .verify import SUITES, run_suites

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def parse_sizes(text: str) -> list[int]:
    """``"256..4096"`` expands to the powers of two in range; commas join parts."""
    sizes = []
    for part in text.split(","):
        part = part.strip()
        if ".." in part:
            lo, hi = (int(v) for v in part.split(".."))
            if not (is_power_of_two(lo) and is_power_of_two(hi)) or lo > hi:
                raise argparse.ArgumentTypeError(f"range {part!r} needs power-of-two ends with lo <= hi")
            n = lo
            while n <= hi:
                sizes.append(n)
                n *= 2
        elif part:
            sizes.append(int(part))
    if not sizes:
        raise argparse.ArgumentTypeError("empty size list")
    return sizes


def _floats(text: str) -> list[float]:
    return [float(v) for v in text.split(",") if v.strip()]


def _ints(text: str) -> list[int]:
    return [int(v) for v in text.split(",") if v.strip()]


def _names(text: str) -> list[str]:
    return [v.strip() for v in text.split(",") if v.strip()]


def _echo(cfg: dict) -> None:
    print("config: " + json.dumps(cfg, sort_keys=True), flush=True)


def _blas_threads() -> list[dict]:
    return [{"api": i.get("internal_api"), "threads": i.get("num_threads")} for i in threadpool_info()]


def _add_common(p: argparse.ArgumentParser, precision: str) -> None:
    p.add_argument("--seed", type=int, default=0, help="single source of all randomness (default 0)")
    p.add_argument("--threads", type=int, default=1, help="BLAS/OpenMP thread limit (default 1)")
    p.add_argument("--precision", choices=("float32", "float64"), default=precision,
                   help=f"floating point type (default {precision})")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bfly", description="Butterfly and pixelfly layers: oracles, benchmarks, training.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("verify", help="run the oracle suites")
    p.add_argument("--suite", default=None, help=f"one of: {', '.join(SUITES)} (default: all)")
    p.add_argument("--seed", type=int, default=0, help="suite RNG seed (default 0)")

    p = sub.add_parser("bench", help="microbenchmarks")
    p.add_argument("kind", choices=("layers", "skew", "sparse"))
    p.add_argument("--sizes", type=parse_sizes, default=None, help="e.g. 256..4096 or 512,1024 (default 1024)")
    p.add_argument("--n", type=int, default=None, help="single size, shorthand for --sizes N")
    p.add_argument("--methods", type=_names, default=None,
                   help="layers: dense,butterfly,pixelfly; sparse: csr,dense,dense_blas (default csr,dense)")
    p.add_argument("--skews", type=_floats, default=[0.0625, 0.25, 1.0, 4.0, 16.0], help="skew list m/n")
    p.add_argument("--sparsities", type=_floats, default=[0.9, 0.99], help="sparsity list in [0, 1)")
    p.add_argument("--iters", type=int, default=1000, help="timed iterations (default 1000)")
    p.add_argument("--warmup", type=int, default=10, help="untimed warmup iterations (default 10)")
    p.add_argument("--batch", type=int, default=1, help="layers: input batch (default 1)")
    p.add_argument("--k", type=int, default=None, help="columns of the right operand (skew default n, sparse default 64)")
    p.add_argument("--block-size", type=int, default=16, help="layers: pixelfly block size (default 16)")
    p.add_argument("--rank", type=int, default=16, help="layers: pixelfly low-rank size (default 16)")
    p.add_argument("--kernel", choices=("blas", "core"), default="blas", help="skew: matmul kernel (default blas)")
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.add_argument("--out", type=Path, default=None, help="report path (default bench_<kind>.<format>)")
    p.add_argument("--series", type=Path, default=None, help="optional two-column plot data file")
    _add_common(p, "float64")

    p = sub.add_parser("train", help="train the single-hidden-layer model")
    _add_model_flags(p)
    p.add_argument("--out", type=Path, default=None, help="run directory (default runs/<method>-seed<seed>)")

    p = sub.add_parser("sweep", help="pixelfly (levels, block, rank) sweep")
    _add_data_flags(p)
    p.add_argument("--levels", type=_ints, default=[1, 2, 4, 7], help="butterfly level counts (default 1,2,4,7)")
    p.add_argument("--blocks", type=_ints, default=[8, 16, 32], help="block sizes (default 8,16,32)")
    p.add_argument("--ranks", type=_ints, default=[2, 4, 64, 128], help="low-rank sizes (default 2,4,64,128)")
    p.add_argument("--n", type=int, default=1024, help="layer size (default 1024)")
    p.add_argument("--out", type=Path, default=Path("sweep.json"), help="report path (default sweep.json)")
    _add_train_flags(p)
    return parser


def _add_data_flags(p):
    p.add_argument("--data", type=Path, default=None, help="CIFAR-10 binary directory")
    p.add_argument("--synthetic", action="store_true", help="use synthetic Gaussian blobs instead of CIFAR-10")
    p.add_argument("--synthetic-samples", type=int, default=2000, help="synthetic train+val pool (default 2000)")


def _add_train_flags(p):
    d = TrainConfig()
    p.add_argument("--epochs", type=int, default=d.epochs, help=f"default {d.epochs}")
    p.add_argument("--lr", type=float, default=d.learning_rate, help=f"default {d.learning_rate}")
    p.add_argument("--momentum", type=float, default=d.momentum, help=f"default {d.momentum}")
    p.add_argument("--batch-size", type=int, default=d.batch_size, help=f"default {d.batch_size}")
    p.add_argument("--validation-fraction", type=float, default=d.validation_fraction,
                   help=f"default {d.validation_fraction}")
    p.add_argument("--no-center", action="store_true", help="do not subtract the training mean image")
    _add_common(p, d.dtype)


def _add_model_flags(p):
    m = ModelConfig()
    p.add_argument("--method", choices=METHODS, default=m.method, help=f"first-layer type (default {m.method})")
    p.add_argument("--lowrank-rank", type=int, default=m.lowrank_rank, help=f"default {m.lowrank_rank}")
    p.add_argument("--block-size", type=int, default=m.block_size, help=f"pixelfly block (default {m.block_size})")
    p.add_argument("--pixelfly-rank", type=int, default=m.pixelfly_rank, help=f"default {m.pixelfly_rank}")
    p.add_argument("--levels", type=int, default=None, help="pixelfly levels (default all)")
    _add_data_flags(p)
    _add_train_flags(p)


def _train_config(args) -> TrainConfig:
    return TrainConfig(
        learning_rate=args.lr,
        momentum=args.momentum,
        batch_size=args.batch_size,
        validation_fraction=args.validation_fraction,
        epochs=args.epochs,
        seed=args.seed,
        dtype=args.precision,
        center_inputs=not args.no_center,
    )


def _dataset(args, n_features: int = 1024):
    if args.synthetic == (args.data is not None):
        raise UsageError("give exactly one of --data DIR or --synthetic")
    if args.synthetic:
        return synthetic_dataset(args.synthetic_samples, rng=make_rng(args.seed), n_features=n_features,
                                 validation_fraction=args.validation_fraction)
    try:
        return load_cifar10(args.data, args.validation_fraction, seed=args.seed)
    except DataError as exc:
        raise UsageError(str(exc)) from None


# ---------------------------------------------------------------- commands


def cmd_verify(args) -> int:
    names = None if args.suite is None else [args.suite]
    if args.suite is not None and args.suite not in SUITES:
        raise UsageError(f"unknown suite {args.suite!r}; valid suites: {', '.join(SUITES)}")
    _echo({"command": "verify", "suites": names or list(SUITES), "seed": args.seed})
    results = run_suites(names, seed=args.seed)
    for r in results:
        print(r.line())
    return EXIT_OK if all(r.passed for r in results) else EXIT_FAIL


def cmd_bench(args) -> int:
    sizes = args.sizes or ([args.n] if args.n else [1024])
    if args.kind == "layers":
        methods = args.methods or list(bench.LAYER_METHODS)
        if any(not is_power_of_two(n) for n in sizes):
            raise UsageError(f"layer sizes must be powers of two, got {sizes}")
    elif args.kind == "sparse":
        methods = args.methods or ["csr", "dense"]
    else:
        methods = [args.kernel]
    try:
        spec = bench.BenchSpec(
            kernel=args.kind, sizes=sizes, skews=args.skews, sparsities=args.sparsities, methods=methods,
            warmup=args.warmup, iters=args.iters, seed=args.seed, batch=args.batch, k=args.k,
            block_size=args.block_size, rank=args.rank, dtype=args.precision,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    out = args.out or Path(f"bench_{args.kind}.{args.format}")
    meta = {"spec": asdict(spec), "threads": args.threads, "format": args.format, "out": str(out)}
    _echo({"command": "bench", **meta})
    with threadpool_limits(limits=args.threads):
        meta["blas"] = _blas_threads()
        try:
            if args.kind == "layers":
                records = bench.bench_layers(spec)
            elif args.kind == "skew":
                records = bench.bench_skewed_mm(spec, kernel=args.kernel)
            else:
                records = bench.bench_sparse_mm(spec, methods=methods)
        except ValueError as exc:
            raise UsageError(str(exc)) from None
    bench.emit_report(records, args.format, out, meta)
    print(f"{'method':<11}{'n':>7}{'m':>7}{'k':>6}{'skew/sp':>9}{'mean_ms':>12}{'std_ms':>11}{'gflops':>9}{'speedup':>9}  status")
    for r in records:
        speed = f"{r.speedup_vs_dense:.2f}" if r.speedup_vs_dense is not None else "-"
        mean = f"{r.mean_ms:.4f}" if r.mean_ms is not None else "-"
        std = f"{r.std_ms:.4f}" if r.std_ms is not None else "-"
        gf = f"{r.throughput_gflops:.3f}" if r.throughput_gflops is not None else "-"
        knob = r.skew if r.skew is not None else r.sparsity
        knob = f"{knob:g}" if knob is not None else "-"
        print(f"{r.method:<11}{r.n:>7}{r.m or '-':>7}{r.k or '-':>6}{knob:>9}{mean:>12}{std:>11}{gf:>9}{speed:>9}  {r.status}")
    if args.kind == "layers":
        for m in methods:
            if m != "dense":
                print(f"break-even {m}: N={bench.break_even(records, m)}")
    if args.series is not None:
        if args.kind == "skew":
            xs, ys = bench.skew_series(records)
            bench.write_series(args.series, xs, ys, "skew throughput_gflops")
        else:
            target = "butterfly" if args.kind == "layers" else "csr"
            xs, ys = bench.speedup_series(records, target)
            bench.write_series(args.series, xs, ys, f"n speedup_vs_dense ({target})")
    print(f"report: {out}")
    return EXIT_OK


def cmd_train(args) -> int:
    train_cfg = _train_config(args)
    try:
        model_cfg = ModelConfig(method=args.method, lowrank_rank=args.lowrank_rank, block_size=args.block_size,
                                pixelfly_rank=args.pixelfly_rank, levels=args.levels)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    out = args.out or Path("runs") / f"{args.method}-seed{args.seed}"
    data_desc = {"synthetic": args.synthetic, "synthetic_samples": args.synthetic_samples,
                 "data": str(args.data) if args.data else None}
    cfg = {"command": "train", "train": asdict(train_cfg), "model": asdict(model_cfg), "data": data_desc,
           "threads": args.threads, "out": str(out)}
    _echo(cfg)
    dataset = _dataset(args)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(json.dumps(cfg, indent=1, sort_keys=True) + "\n")
    with threadpool_limits(limits=args.threads):
        try:
            model = seeded_model(model_cfg, args.seed, np.dtype(args.precision))
        except ValueError as exc:
            raise UsageError(str(exc)) from None
        progress = lambda r: print(
            f"epoch {r.epoch:3d} loss={r.train_loss:.4f} train_acc={r.train_acc:.4f} val_acc={r.val_acc:.4f}",
            flush=True,
        )
        try:
            result = train_shl(model, dataset, train_cfg, metrics_path=out / "metrics.jsonl",
                               timing_path=out / "timing.jsonl", progress=progress)
        except TrainingDiverged as exc:
            print(f"error: training diverged: {exc}", file=sys.stderr)
            return EXIT_FAIL
    save_checkpoint(out / "model.ckpt", model, seed=args.seed, meta={"epochs": train_cfg.epochs})
    pc = count_params(model)
    print(f"N_params={pc.total} compression={100 * pc.compression:.2f}% "
          f"test_acc={100 * result.test_acc:.2f}% time_s={result.total_time_s:.2f}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    try:
        grid = bench.SweepGrid(args.levels, args.blocks, args.ranks, n=args.n)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    train_cfg = _train_config(args)
    meta = {"command": "sweep", "grid": asdict(grid), "train": asdict(train_cfg), "threads": args.threads,
            "data": str(args.data) if args.data else "synthetic", "out": str(args.out)}
    _echo(meta)
    dataset = _dataset(args, n_features=args.n)

    def progress(c):
        print(f"cell levels={c.levels} block={c.block} rank={c.rank} status={c.status} "
              f"acc={c.accuracy} n_params={c.n_params}", flush=True)

    with threadpool_limits(limits=args.threads):
        cells, summaries = bench.sweep_pixelfly(grid, dataset, train_cfg, seed=args.seed, progress=progress)
    args.out.write_text(json.dumps(bench.sweep_report(cells, summaries, meta), indent=1) + "\n")
    print(bench.format_sweep_table(summaries))
    print(f"report: {args.out}")
    return EXIT_OK if any(c.status == "ok" for c in cells) else EXIT_FAIL


COMMANDS = {"verify": cmd_verify, "bench": cmd_bench, "train": cmd_train, "sweep": cmd_sweep}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
