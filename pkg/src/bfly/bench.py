"""Timing harness, layer/matmul benchmarks and report emission.

Every timed kernel is checked against an independent oracle at least once;
records carry closed-form flop counts, never measured ones.
"""

from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .baselines import DenseLinearLayer
from .butterfly import ButterflyLevel, Init, bit_reversal_permutation, butterfly_new
from .core import CsrMatrix, csr_spmm, csr_to_dense, is_power_of_two, make_rng, matmul, random_sparse, rel_error
from .pixelfly import build_mask, dense_reconstruct_pixelfly, pixelfly_new

CSV_FIELDS = (
    "kernel", "method", "n", "m", "k", "skew", "sparsity", "block", "rank", "levels", "iters",
    "mean_ms", "std_ms", "min_ms", "flops", "throughput_gflops", "n_params", "speedup_vs_dense", "status",
)
INT_FIELDS = {"n", "m", "k", "block", "rank", "levels", "iters", "flops", "n_params"}
FLOAT_FIELDS = {"skew", "sparsity", "mean_ms", "std_ms", "min_ms", "throughput_gflops", "speedup_vs_dense"}
NOISE_RATIO = 0.5
NOISE_MIN_MS = 1.0
LAYER_METHODS = ("dense", "butterfly", "pixelfly")


@dataclass
class BenchSpec:
    kernel: str
    sizes: list[int] = field(default_factory=lambda: [1024])
    skews: list[float] = field(default_factory=lambda: [1.0])
    sparsities: list[float] = field(default_factory=lambda: [0.9, 0.99])
    methods: list[str] = field(default_factory=lambda: list(LAYER_METHODS))
    warmup: int = 10
    iters: int = 1000
    seed: int = 0
    batch: int = 1
    k: int | None = None
    block_size: int = 16
    rank: int = 16
    dtype: str = "float64"

    def __post_init__(self):
        if self.iters < 1:
            raise ValueError(f"timed iterations must be >= 1, got {self.iters}")
        if self.warmup < 0:
            raise ValueError(f"warmup must be >= 0, got {self.warmup}")
        self.sizes = sorted(self.sizes)


@dataclass
class BenchRecord:
    kernel: str
    method: str
    n: int
    m: int | None = None
    k: int | None = None
    skew: float | None = None
    sparsity: float | None = None
    block: int | None = None
    rank: int | None = None
    levels: int | None = None
    iters: int = 0
    mean_ms: float | None = None
    std_ms: float | None = None
    min_ms: float | None = None
    flops: int | None = None
    throughput_gflops: float | None = None
    n_params: int | None = None
    speedup_vs_dense: float | None = None
    status: str = "ok"
    samples_ms: list[float] = field(default_factory=list, repr=False, compare=False)

    def to_row(self) -> dict:
        return {name: getattr(self, name) for name in CSV_FIELDS}

    @classmethod
    def from_row(cls, row: dict) -> "BenchRecord":
        values = {}
        for name in CSV_FIELDS:
            v = row.get(name)
            if v is None or v == "":
                values[name] = None if name not in ("kernel", "method", "status") else ""
            elif name in INT_FIELDS:
                values[name] = int(v)
            elif name in FLOAT_FIELDS:
                values[name] = float(v)
            else:
                values[name] = v
        values["iters"] = values["iters"] or 0
        return cls(**values)

    def set_timing(self, samples_ms: np.ndarray) -> None:
        self.samples_ms = [float(s) for s in samples_ms]
        self.iters = len(samples_ms)
        self.mean_ms = float(np.mean(samples_ms))
        self.std_ms = float(np.std(samples_ms))
        self.min_ms = float(np.min(samples_ms))
        if self.flops is not None and self.mean_ms > 0:
            self.throughput_gflops = self.flops / (self.mean_ms * 1e-3) / 1e9
        if is_noisy(self.mean_ms, self.std_ms) and self.status == "ok":
            self.status = "noisy"


def is_noisy(mean_ms: float, std_ms: float) -> bool:
    """Kernels of at least 1 ms whose std/mean exceeds 0.5 are flagged."""
    return mean_ms >= NOISE_MIN_MS and std_ms / mean_ms > NOISE_RATIO


def time_callable(fn: Callable[[], object], warmup: int, iters: int, check: Callable[[object], None] | None = None):
    """Per-iteration wall times in ms (monotonic clock).

    ``check`` runs on every timed call's output, outside the timed region.
    """
    for _ in range(warmup):
        fn()
    samples = np.empty(iters)
    for i in range(iters):
        t0 = time.perf_counter_ns()
        out = fn()
        samples[i] = (time.perf_counter_ns() - t0) / 1e6
        if check is not None:
            check(out)
    return samples


# ---------------------------------------------------------------- layers


def butterfly_flops(n: int) -> int:
    return 2 * n * int(math.log2(n))


def dense_flops(n: int) -> int:
    return 2 * n * n


def pixelfly_flops(n: int, block: int, rank: int, levels: int | None = None) -> int:
    return 2 * build_mask(n, block, levels).nnz + 4 * n * rank


def level_csr(level: ButterflyLevel) -> CsrMatrix:
    """A butterfly factor as CSR, assembled from its pair coefficients."""
    i, j = level.pair_indices()
    a, b, c, d = level.coeffs.T
    n = level.n
    rows = np.concatenate([i, i, j, j])
    cols = np.concatenate([i, j, i, j])
    vals = np.concatenate([a, b, c, d])
    order = np.lexsort((cols, rows))
    row_ptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(np.bincount(rows, minlength=n), out=row_ptr[1:])
    return CsrMatrix(n, n, row_ptr, cols[order], vals[order])


def butterfly_oracle(layer, x: np.ndarray) -> np.ndarray:
    """Apply a butterfly layer as a chain of CSR factor products on column vectors."""
    h = layer.permutation.apply(x).T
    for level in layer.levels:
        h = csr_spmm(level_csr(level), h)
    return h.T


def _layer_check(expected: np.ndarray, tol: float):
    def check(out):
        err = rel_error(out, expected)
        if err > tol:
            raise AssertionError(f"oracle mismatch: relative error {err:.3e} > {tol:.1e}")
    return check


def _tolerance(dtype) -> float:
    return 1e-10 if np.dtype(dtype) == np.float64 else 1e-4


def bench_layers(spec: BenchSpec) -> list[BenchRecord]:
    """Forward-pass timing of dense vs butterfly vs pixelfly at each size."""
    for m in spec.methods:
        if m not in LAYER_METHODS:
            raise ValueError(f"unknown layer method {m!r}; valid: {', '.join(LAYER_METHODS)}")
    for n in spec.sizes:
        if not is_power_of_two(n):
            raise ValueError(f"layer benchmark sizes must be powers of two, got {n}")
    dtype = np.dtype(spec.dtype)
    tol = _tolerance(dtype)
    records = []
    for n in spec.sizes:
        rng = make_rng(spec.seed + n)
        x = rng.standard_normal((spec.batch, n)).astype(dtype)
        per_size = []
        for method in spec.methods:
            rec = BenchRecord(kernel="layers", method=method, n=n, m=spec.batch)
            try:
                if method == "dense":
                    layer = DenseLinearLayer.create(n, n, rng, bias=False, dtype=dtype)
                    rec.flops = dense_flops(n) * spec.batch
                    expected = matmul(x, layer.weight.T.astype(np.float64))
                elif method == "butterfly":
                    layer = butterfly_new(n, Init.GIVENS, rng, permutation=bit_reversal_permutation(n), dtype=dtype)
                    rec.flops = butterfly_flops(n) * spec.batch
                    rec.levels = int(math.log2(n))
                    expected = butterfly_oracle(layer, x.astype(np.float64))
                else:
                    block = min(spec.block_size, n)
                    rank = min(spec.rank, n)
                    layer = pixelfly_new(n, block, rank, rng, dtype=dtype)
                    rec.block, rec.rank, rec.levels = block, rank, layer.mask.levels
                    rec.flops = pixelfly_flops(n, block, rank) * spec.batch
                    expected = matmul(x.astype(np.float64), dense_reconstruct_pixelfly(layer).T.astype(np.float64))
            except MemoryError:
                rec.status = "skipped: out of memory"
                per_size.append(rec)
                continue
            except ValueError as exc:
                rec.status = f"skipped: {exc}"
                per_size.append(rec)
                continue
            rec.n_params = layer.param_count()
            fwd = lambda layer=layer: layer.forward(x, cache=False)
            _layer_check(expected, tol)(fwd())
            rec.set_timing(time_callable(fwd, spec.warmup, spec.iters))
            per_size.append(rec)
        dense = next((r for r in per_size if r.method == "dense" and r.mean_ms), None)
        if dense is not None:
            for r in per_size:
                if r.mean_ms:
                    r.speedup_vs_dense = dense.mean_ms / r.mean_ms
        records.extend(per_size)
    return records


def break_even(records: list[BenchRecord], method: str) -> int | None:
    """Smallest size from which the method's speedup over dense stays >= 1."""
    pts = sorted((r.n, r.speedup_vs_dense) for r in records if r.method == method and r.speedup_vs_dense is not None)
    point = None
    for n, s in reversed(pts):
        if s < 1.0:
            break
        point = n
    return point


# ---------------------------------------------------------------- matmul


def skew_dims(n: int, s: float) -> tuple[int, int]:
    """(m, inner) with m / inner ~= s and m * inner ~= n * n."""
    root = math.sqrt(s)
    return max(1, round(n * root)), max(1, round(n / root))


def bench_skewed_mm(spec: BenchSpec, kernel: str = "blas") -> list[BenchRecord]:
    """A (m x inner) @ B (inner x k) with m*inner*k held at n*n*k across skews."""
    if kernel not in ("blas", "core"):
        raise ValueError(f"unknown matmul kernel {kernel!r}; valid: blas, core")
    dtype = np.dtype(spec.dtype)
    records = []
    for n in spec.sizes:
        k = spec.k or n
        for s in spec.skews:
            if s <= 0:
                raise ValueError(f"skew must be positive, got {s}")
            m, inner = skew_dims(n, s)
            rng = make_rng(spec.seed + n)
            a = rng.standard_normal((m, inner)).astype(dtype)
            b = rng.standard_normal((inner, k)).astype(dtype)
            fn = (lambda: a @ b) if kernel == "blas" else (lambda: matmul(a, b))
            rec = BenchRecord(kernel="skew", method=kernel, n=inner, m=m, k=k, skew=m / inner, flops=2 * m * inner * k)
            _layer_check(matmul(a, b), 1e-12 if dtype == np.float64 else 1e-5)(fn())
            rec.set_timing(time_callable(fn, spec.warmup, spec.iters))
            records.append(rec)
    return records


SPARSE_METHODS = ("csr", "dense", "dense_blas")


def bench_sparse_mm(spec: BenchSpec, methods=("csr", "dense")) -> list[BenchRecord]:
    """CSR (n x n) @ dense (n x k) against dense products of the same operands.

    Throughput uses the dense flop count 2*n*n*k for every method.
    """
    for meth in methods:
        if meth not in SPARSE_METHODS:
            raise ValueError(f"unknown sparse method {meth!r}; valid: {', '.join(SPARSE_METHODS)}")
    records = []
    for n in spec.sizes:
        k = spec.k or 64
        for sp in spec.sparsities:
            rng = make_rng(spec.seed + n)
            a = random_sparse(n, n, sp, rng)
            dense_a = csr_to_dense(a)
            b = rng.standard_normal((n, k))
            expected = matmul(dense_a, b)
            check = _layer_check(expected, 1e-12)
            per = []
            for meth in methods:
                if meth == "csr":
                    fn = lambda: csr_spmm(a, b)
                elif meth == "dense":
                    fn = lambda: matmul(dense_a, b)
                else:
                    fn = lambda: dense_a @ b
                rec = BenchRecord(kernel="sparse", method=meth, n=n, m=n, k=k, sparsity=sp, flops=2 * n * n * k,
                                  n_params=a.nnz if meth == "csr" else n * n)
                rec.set_timing(time_callable(fn, spec.warmup, spec.iters, check=check))
                per.append(rec)
            dense = next((r for r in per if r.method == "dense"), None)
            if dense is not None:
                for r in per:
                    r.speedup_vs_dense = dense.mean_ms / r.mean_ms
            records.extend(per)
    return records


# ---------------------------------------------------------------- reports


def _csv_value(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def emit_report(records: list[BenchRecord], fmt: str, path, meta: dict | None = None) -> None:
    """CSV (fixed header, optional leading ``# meta=`` line) or JSON ``{"meta", "records"}``."""
    path = Path(path)
    if fmt == "csv":
        with open(path, "w", newline="") as fh:
            if meta:
                fh.write("# meta=" + json.dumps(meta, sort_keys=True) + "\n")
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(CSV_FIELDS)
            for r in records:
                writer.writerow([_csv_value(v) for v in r.to_row().values()])
    elif fmt == "json":
        doc = {"meta": meta or {}, "records": [r.to_row() for r in records]}
        path.write_text(json.dumps(doc, indent=1) + "\n")
    else:
        raise ValueError(f"unknown report format {fmt!r}; valid: csv, json")


def read_report(path) -> tuple[list[BenchRecord], dict]:
    path = Path(path)
    text = path.read_text()
    if path.suffix == ".json" or text.lstrip().startswith("{"):
        doc = json.loads(text)
        return [BenchRecord.from_row(r) for r in doc["records"]], doc.get("meta", {})
    meta = {}
    lines = text.splitlines()
    if lines and lines[0].startswith("# meta="):
        meta = json.loads(lines[0][len("# meta="):])
        lines = lines[1:]
    rows = list(csv.DictReader(lines))
    return [BenchRecord.from_row(r) for r in rows], meta


def write_series(path, xs, ys, header: str | None = None) -> None:
    """Plain two-column text, one ``x y`` pair per line."""
    with open(path, "w") as fh:
        if header:
            fh.write(f"# {header}\n")
        for x, y in zip(xs, ys):
            fh.write(f"{x!r} {y!r}\n")


def speedup_series(records: list[BenchRecord], method: str):
    pts = sorted((r.n, r.speedup_vs_dense) for r in records if r.method == method and r.speedup_vs_dense is not None)
    return [p[0] for p in pts], [p[1] for p in pts]


def skew_series(records: list[BenchRecord]):
    pts = sorted((r.skew, r.throughput_gflops) for r in records if r.kernel == "skew" and r.throughput_gflops)
    return [p[0] for p in pts], [p[1] for p in pts]


def record_dicts(records):
    return [asdict(r) for r in records]



# ---------------------------------------------------------------- pixelfly sweep

SWEEP_PARAMS = ("levels", "block", "rank")
SWEEP_METRICS = ("time_s", "accuracy", "n_params")


@dataclass
class SweepGrid:
    levels: list[int]
    blocks: list[int]
    ranks: list[int]
    n: int = 1024

    def __post_init__(self):
        if not (self.levels and self.blocks and self.ranks):
            raise ValueError("sweep grid is empty: levels, blocks and ranks each need at least one value")

    def cells(self):
        for lv in self.levels:
            for b in self.blocks:
                for r in self.ranks:
                    yield lv, b, r


@dataclass
class SweepCell:
    levels: int
    block: int
    rank: int
    status: str = "ok"
    time_s: float | None = None
    accuracy: float | None = None
    n_params: int | None = None

    def key(self, name: str) -> int:
        return getattr(self, name)


@dataclass
class MetricStats:
    mean: float
    max_std: float
    groups: list[dict]


@dataclass
class SweepSummary:
    varied: str
    held: tuple[str, str]
    values: list[int]
    metrics: dict[str, MetricStats]


def pixelfly_cell_error(n: int, block: int, rank: int, levels: int) -> str | None:
    """Reason a (levels, block, rank) cell cannot be built at size n, else None."""
    try:
        build_mask(n, block, levels)
    except ValueError as exc:
        return str(exc)
    if not 0 <= rank <= n:
        return f"rank must lie in [0, n={n}], got {rank}"
    return None


def summarize_sweep(cells: list[SweepCell]) -> list[SweepSummary]:
    """Vary one parameter with the other two held fixed.

    For each held-constant combination the metric's mean and population std
    over the varied values are computed; the summary reports the mean over all
    valid cells and the largest per-combination std.
    """
    ok = [c for c in cells if c.status == "ok"]
    out = []
    for varied in SWEEP_PARAMS:
        held = tuple(p for p in SWEEP_PARAMS if p != varied)
        groups: dict[tuple, list[SweepCell]] = {}
        for c in ok:
            groups.setdefault(tuple(c.key(p) for p in held), []).append(c)
        metrics = {}
        for metric in SWEEP_METRICS:
            rows = []
            for key, members in sorted(groups.items()):
                vals = np.array([getattr(c, metric) for c in members], dtype=np.float64)
                rows.append({
                    "held": dict(zip(held, key)),
                    "count": len(vals),
                    "mean": float(vals.mean()),
                    "std": float(vals.std()),
                })
            all_vals = [getattr(c, metric) for c in ok]
            metrics[metric] = MetricStats(
                mean=float(np.mean(all_vals)) if all_vals else float("nan"),
                max_std=max((r["std"] for r in rows), default=float("nan")),
                groups=rows,
            )
        values = sorted({c.key(varied) for c in ok})
        out.append(SweepSummary(varied, held, values, metrics))
    return out


def sweep_pixelfly(grid: SweepGrid, dataset, train_config, seed: int = 0, progress=None):
    """Train one pixelfly SHL model per grid cell; invalid cells are skipped with a reason.

    Returns ``(cells, summaries)``.  Time is total training wall time in
    seconds and accuracy is test accuracy in percent.
    """
    from .train import ModelConfig, seeded_model, train_shl

    cells = []
    for lv, b, r in grid.cells():
        cell = SweepCell(lv, b, r)
        reason = pixelfly_cell_error(grid.n, b, r, lv)
        if reason is not None:
            cell.status = f"skipped: {reason}"
        else:
            cfg = ModelConfig(method="pixelfly", n_in=grid.n, n_hidden=grid.n, block_size=b, pixelfly_rank=r, levels=lv)
            try:
                model = seeded_model(cfg, seed, np.dtype(train_config.dtype))
                result = train_shl(model, dataset, train_config)
                cell.time_s = result.total_time_s
                cell.accuracy = 100.0 * result.test_acc
                cell.n_params = result.params.total
            except Exception as exc:  # per-cell failures are recorded, the sweep goes on
                cell.status = f"failed: {type(exc).__name__}: {exc}"
        cells.append(cell)
        if progress is not None:
            progress(cell)
    return cells, summarize_sweep(cells)


def sweep_report(cells: list[SweepCell], summaries: list[SweepSummary], meta: dict | None = None) -> dict:
    return {
        "meta": meta or {},
        "cells": [asdict(c) for c in cells],
        "summaries": [asdict(s) for s in summaries],
    }


def format_sweep_table(summaries: list[SweepSummary]) -> str:
    """Plain-text table: one row per varied parameter, mean and max std per metric."""
    head = f"{'varied':<8}" + "".join(f"{m + ' mean':>16}{m + ' std':>16}" for m in SWEEP_METRICS)
    lines = [head]
    for s in summaries:
        row = f"{s.varied:<8}"
        for m in SWEEP_METRICS:
            st = s.metrics[m]
            row += f"{st.mean:>16.4f}{st.max_std:>16.4f}"
        lines.append(row)
    return "\n".join(lines)
