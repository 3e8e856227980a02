"""Train every first-layer method on the SHL model and print a results table.

    python scripts/shl_table.py --data ./cifar10 --epochs 30
    python scripts/shl_table.py --synthetic --epochs 3
"""

import argparse
import json
from dataclasses import asdict
from pathlib import Path

import numpy as np

from bfly.core import make_rng
from bfly.data import load_cifar10, synthetic_dataset
from bfly.train import METHODS, ModelConfig, TrainConfig, seeded_model, train_shl


def main():
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--data", type=Path)
    p.add_argument("--synthetic", action="store_true")
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--methods", default=",".join(METHODS))
    p.add_argument("--out", type=Path, default=Path("shl_table.json"))
    args = p.parse_args()
    if args.synthetic == (args.data is not None):
        p.error("give exactly one of --data or --synthetic")
    ds = synthetic_dataset(2000, rng=make_rng(args.seed)) if args.synthetic else load_cifar10(args.data, seed=args.seed)
    cfg = TrainConfig(epochs=args.epochs, seed=args.seed)
    print(json.dumps({"train": asdict(cfg), "sizes": ds.sizes()}))
    rows = []
    print(f"{'method':<10}{'N_params':>10}{'compr %':>9}{'test %':>8}{'total s':>9}{'layer1 s':>9}")
    for method in args.methods.split(","):
        model = seeded_model(ModelConfig(method=method), args.seed, np.dtype(cfg.dtype))
        res = train_shl(model, ds, cfg)
        row = {"method": method, "n_params": res.params.total, "compression": res.params.compression,
               "test_acc": res.test_acc, "total_s": res.total_time_s, "layer1_s": res.layer1_time_s}
        rows.append(row)
        print(f"{method:<10}{row['n_params']:>10}{100 * row['compression']:>9.2f}{100 * row['test_acc']:>8.2f}"
              f"{row['total_s']:>9.1f}{row['layer1_s']:>9.1f}", flush=True)
    args.out.write_text(json.dumps(rows, indent=1) + "\n")


if __name__ == "__main__":
    main()
