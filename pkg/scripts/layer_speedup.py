"""Dense vs butterfly vs pixelfly forward timing across sizes, with plot data.

    python scripts/layer_speedup.py --sizes 256..8192 --iters 1000
"""

import argparse
from pathlib import Path

from threadpoolctl import threadpool_limits

from bfly import bench
from bfly.cli import parse_sizes


def main():
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--sizes", type=parse_sizes, default=parse_sizes("256..8192"))
    p.add_argument("--iters", type=int, default=1000)
    p.add_argument("--batch", type=int, default=1)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--out-dir", type=Path, default=Path("bench_out"))
    args = p.parse_args()
    args.out_dir.mkdir(parents=True, exist_ok=True)
    spec = bench.BenchSpec("layers", sizes=args.sizes, iters=args.iters, batch=args.batch)
    with threadpool_limits(limits=args.threads):
        recs = bench.bench_layers(spec)
    bench.emit_report(recs, "csv", args.out_dir / "layers.csv", {"threads": args.threads, "iters": args.iters})
    for method in ("butterfly", "pixelfly"):
        xs, ys = bench.speedup_series(recs, method)
        bench.write_series(args.out_dir / f"speedup_{method}.txt", xs, ys, "n speedup_vs_dense")
        print(f"{method}: break-even N={bench.break_even(recs, method)}; " +
              ", ".join(f"{x}:{y:.2f}" for x, y in zip(xs, ys)))


if __name__ == "__main__":
    main()
