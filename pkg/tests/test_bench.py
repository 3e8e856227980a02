import csv
import json
import statistics

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from bfly import bench
from bfly.bench import BenchRecord, BenchSpec, SweepCell, SweepGrid
from bfly.butterfly import Init, bit_reversal_permutation, butterfly_apply, butterfly_new
from bfly.data import synthetic_dataset
from bfly.train import TrainConfig


def test_spec_invariants():
    assert BenchSpec("layers", sizes=[1024, 256]).sizes == [256, 1024]
    with pytest.raises(ValueError, match="iterations"):
        BenchSpec("layers", iters=0)


def test_closed_form_flops():
    assert bench.butterfly_flops(4096) == 2 * 4096 * 12 == 98304
    assert bench.dense_flops(1024) == 2 * 1024 * 1024
    assert bench.pixelfly_flops(64, 8, 2) == 2 * 64 * 8 * 4 + 4 * 64 * 2


@given(st.floats(0.01, 100), st.floats(0, 100))
def test_noise_flag(mean, std):
    assert bench.is_noisy(mean, std) == (mean >= 1.0 and std / mean > 0.5)


def test_noisy_status_from_injected_timings():
    r = BenchRecord("layers", "dense", 8)
    r.set_timing(np.array([1.0, 1.0, 10.0]))
    assert r.status == "noisy"
    r = BenchRecord("layers", "dense", 8)
    r.set_timing(np.array([0.01, 0.5]))
    assert r.status == "ok"
    assert r.std_ms >= 0 and r.min_ms == 0.01 and r.iters == 2


def test_time_callable_runs_check_every_iteration():
    seen = []
    samples = bench.time_callable(lambda: 7, warmup=3, iters=5, check=seen.append)
    assert len(samples) == 5 and np.all(samples >= 0)
    assert seen == [7] * 5


def test_level_csr_oracle(rng):
    layer = butterfly_new(32, Init.UNIFORM_SCALED, rng, permutation=bit_reversal_permutation(32))
    x = rng.standard_normal((2, 32))
    np.testing.assert_allclose(bench.butterfly_oracle(layer, x), butterfly_apply(layer, x), atol=1e-13)


def test_bench_layers_small():
    spec = BenchSpec("layers", sizes=[64, 128], iters=3, warmup=1, block_size=8, rank=2)
    recs = bench.bench_layers(spec)
    assert [(r.method, r.n) for r in recs] == [(m, n) for n in (64, 128) for m in bench.LAYER_METHODS]
    for r in recs:
        assert r.iters == 3 and r.mean_ms > 0 and r.status in ("ok", "noisy")
        if r.method == "dense":
            assert r.speedup_vs_dense == 1.0
    assert next(r for r in recs if r.method == "butterfly" and r.n == 64).flops == 2 * 64 * 6


def test_bench_layers_rejects_bad_input():
    with pytest.raises(ValueError, match="powers of two"):
        bench.bench_layers(BenchSpec("layers", sizes=[100], iters=1))
    with pytest.raises(ValueError, match="unknown layer method"):
        bench.bench_layers(BenchSpec("layers", sizes=[64], methods=["fft"], iters=1))


def test_pixelfly_invalid_block_is_skipped():
    recs = bench.bench_layers(BenchSpec("layers", sizes=[32], methods=["pixelfly"], block_size=3, iters=1))
    assert recs[0].status.startswith("skipped")


def test_out_of_memory_is_skipped(monkeypatch):
    def boom(*a, **k):
        raise MemoryError
    monkeypatch.setattr(bench.DenseLinearLayer, "create", boom)
    recs = bench.bench_layers(BenchSpec("layers", sizes=[64], methods=["dense", "butterfly"], iters=1))
    assert recs[0].status == "skipped: out of memory"
    assert recs[1].speedup_vs_dense is None


def test_break_even():
    recs = [BenchRecord("layers", "butterfly", n, speedup_vs_dense=s) for n, s in [(8, 0.5), (16, 1.2), (32, 0.9), (64, 2.0), (128, 3.0)]]
    assert bench.break_even(recs, "butterfly") == 64
    assert bench.break_even(recs[:1], "butterfly") is None


def test_skew_dims_hold_work_constant():
    spec = BenchSpec("skew", sizes=[256], skews=[1 / 16, 0.25, 1, 4, 16], iters=1, warmup=0)
    recs = bench.bench_skewed_mm(spec)
    assert len(recs) == 5
    for r in recs:
        assert r.m * r.n == 256 * 256 and r.k == 256
        assert r.flops == 2 * 256 * 256 * 256
    assert [r.skew for r in recs] == [1 / 16, 0.25, 1, 4, 16]


def test_skew_rounds_non_integer_dims():
    r = bench.bench_skewed_mm(BenchSpec("skew", sizes=[10], skews=[3.0], iters=1, warmup=0), kernel="core")[0]
    assert (r.m, r.n) == (17, 6)


def test_sparse_bench_records():
    spec = BenchSpec("sparse", sizes=[64], sparsities=[0.0, 0.9], iters=2, warmup=0, k=8)
    recs = bench.bench_sparse_mm(spec, methods=("csr", "dense", "dense_blas"))
    assert len(recs) == 6
    for r in recs:
        assert r.flops == 2 * 64 * 64 * 8
    assert recs[3].n_params == round(0.1 * 64 * 64)
    with pytest.raises(ValueError):
        bench.bench_sparse_mm(BenchSpec("sparse", sparsities=[1.0], iters=1))


def sample_records():
    return [
        BenchRecord("layers", "dense", 64, m=1, iters=3, mean_ms=0.1, std_ms=0.01, min_ms=0.09, flops=8192,
                    throughput_gflops=0.08192, n_params=4096, speedup_vs_dense=1.0),
        BenchRecord("sparse", "csr", 128, m=128, k=64, sparsity=0.99, iters=2, mean_ms=1 / 3, std_ms=0.0,
                    min_ms=1 / 3, flops=2097152, status="noisy"),
    ]


def test_csv_report(tmp_path):
    path = tmp_path / "r.csv"
    bench.emit_report(sample_records(), "csv", path, meta={"seed": 0})
    lines = path.read_text().splitlines()
    assert lines[0].startswith("# meta=")
    assert lines[1] == ",".join(bench.CSV_FIELDS)
    rows = list(csv.reader(lines[1:]))
    assert {len(r) for r in rows} == {19}
    recs, meta = bench.read_report(path)
    assert recs == sample_records() and meta == {"seed": 0}


def test_empty_csv_is_header_only(tmp_path):
    path = tmp_path / "r.csv"
    bench.emit_report([], "csv", path)
    assert path.read_text() == ",".join(bench.CSV_FIELDS) + "\n"


def test_json_round_trip(tmp_path):
    path = tmp_path / "r.json"
    bench.emit_report(sample_records(), "json", path, meta={"seed": 5})
    doc = json.loads(path.read_text())
    assert [BenchRecord.from_row(r) for r in doc["records"]] == sample_records()
    assert doc["meta"] == {"seed": 5}


def test_report_errors(tmp_path):
    with pytest.raises(ValueError, match="format"):
        bench.emit_report([], "xml", tmp_path / "r")
    with pytest.raises(OSError):
        bench.emit_report([], "csv", tmp_path / "missing" / "r.csv")


def test_series_file(tmp_path):
    bench.write_series(tmp_path / "s.txt", [1, 2], [0.5, 1.5], "n speedup")
    assert (tmp_path / "s.txt").read_text() == "# n speedup\n1 0.5\n2 1.5\n"


def fake_cells(rng):
    return [
        SweepCell(lv, b, r, time_s=float(rng.random()), accuracy=float(rng.random() * 100), n_params=int(rng.integers(1e5)))
        for lv in (1, 2, 3) for b in (8, 16) for r in (2, 4, 64)
    ]


def test_summary_matches_statistics_module(rng):
    cells = fake_cells(rng)
    for s in bench.summarize_sweep(cells):
        for metric, stats in s.metrics.items():
            groups = {}
            for c in cells:
                groups.setdefault(tuple(getattr(c, h) for h in s.held), []).append(getattr(c, metric))
            stds = [statistics.pstdev(v) for v in groups.values()]
            assert stats.max_std == pytest.approx(max(stds), abs=1e-12)
            assert stats.mean == pytest.approx(statistics.fmean(getattr(c, metric) for c in cells), abs=1e-12)


def test_single_point_sweep_has_zero_std():
    (s, *_) = bench.summarize_sweep([SweepCell(1, 8, 2, time_s=3.0, accuracy=40.0, n_params=10)])
    assert all(m.max_std == 0.0 for m in s.metrics.values())


def test_skipped_cells_excluded():
    cells = [SweepCell(1, 8, 2, time_s=1.0, accuracy=1.0, n_params=1), SweepCell(9, 8, 2, status="skipped: bad")]
    assert bench.summarize_sweep(cells)[0].values == [1]


def test_cell_validation():
    assert bench.pixelfly_cell_error(1024, 32, 4, 7) is not None
    assert bench.pixelfly_cell_error(1024, 3, 4, 1) is not None
    assert bench.pixelfly_cell_error(1024, 8, 2000, 1) is not None
    assert bench.pixelfly_cell_error(1024, 8, 4, 7) is None


def test_empty_grid():
    with pytest.raises(ValueError, match="empty"):
        SweepGrid([], [8], [2])


def test_sweep_runs_and_skips(rng):
    ds = synthetic_dataset(60, rng=rng, n_features=64)
    grid = SweepGrid([1, 4], [8], [2, 4], n=64)
    cells, summaries = bench.sweep_pixelfly(grid, ds, TrainConfig(epochs=1))
    assert [c.status for c in cells][:2] == ["ok", "ok"]
    assert all(c.status.startswith("skipped") for c in cells[2:])
    assert cells[1].n_params - cells[0].n_params == 2 * 64 * 2
    assert "rank" in bench.format_sweep_table(summaries)
    json.dumps(bench.sweep_report(cells, summaries))
