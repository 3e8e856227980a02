"""Pixelfly (levels, block, rank) sweep in the one-parameter-at-a-time layout.

    python scripts/pixelfly_sweep.py --data ./cifar10 --epochs 10
"""

import argparse
import json
from pathlib import Path

from bfly import bench
from bfly.core import make_rng
from bfly.data import load_cifar10, synthetic_dataset
from bfly.train import TrainConfig


def main():
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--data", type=Path)
    p.add_argument("--synthetic", action="store_true")
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, default=Path("pixelfly_sweep.json"))
    args = p.parse_args()
    if args.synthetic == (args.data is not None):
        p.error("give exactly one of --data or --synthetic")
    ds = synthetic_dataset(2000, rng=make_rng(args.seed)) if args.synthetic else load_cifar10(args.data, seed=args.seed)
    grid = bench.SweepGrid(levels=[1, 2, 4, 7], blocks=[8, 16, 32], ranks=[2, 4, 64, 128])
    cells, summaries = bench.sweep_pixelfly(
        grid, ds, TrainConfig(epochs=args.epochs, seed=args.seed), seed=args.seed,
        progress=lambda c: print(c, flush=True),
    )
    args.out.write_text(json.dumps(bench.sweep_report(cells, summaries, {"epochs": args.epochs}), indent=1) + "\n")
    print(bench.format_sweep_table(summaries))


if __name__ == "__main__":
    main()
