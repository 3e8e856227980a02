import json

import pytest

from bfly.cli import main, parse_sizes


def config_line(out):
    first = out.splitlines()[0]
    assert first.startswith("config: ")
    return json.loads(first[len("config: "):])


def test_parse_sizes():
    assert parse_sizes("256..4096") == [256, 512, 1024, 2048, 4096]
    assert parse_sizes("8,16..32") == [8, 16, 32]


def test_verify_single_suite(capsys):
    assert main(["verify", "--suite", "fft"]) == 0
    out = capsys.readouterr().out
    assert config_line(out)["suites"] == ["fft"]
    assert "PASS fft" in out


def test_verify_unknown_suite(capsys):
    assert main(["verify", "--suite", "nosuch"]) == 2
    assert "valid suites: butterfly, fft, gradients, mask, csr" in capsys.readouterr().err


def test_usage_errors(capsys):
    assert main([]) == 2
    assert main(["train", "--method", "nosuch"]) == 2
    assert "baseline" in capsys.readouterr().err
    assert main(["train", "--epochs", "1"]) == 2
    assert main(["bench", "layers", "--sizes", "100"]) == 2


def test_missing_data_directory(tmp_path, capsys):
    assert main(["train", "--data", str(tmp_path / "none"), "--epochs", "1", "--out", str(tmp_path / "r")]) == 2
    assert "no CIFAR-10" in capsys.readouterr().err


def test_train_synthetic(tmp_path, capsys):
    out_dir = tmp_path / "run"
    rc = main(["train", "--method", "baseline", "--synthetic", "--synthetic-samples", "200", "--epochs", "1",
               "--out", str(out_dir)])
    assert rc == 0
    out = capsys.readouterr().out
    assert config_line(out)["train"]["learning_rate"] == 0.001
    assert out.splitlines()[-1].startswith("N_params=1059850 compression=0.00% test_acc=")
    assert {p.name for p in out_dir.iterdir()} == {"config.json", "metrics.jsonl", "timing.jsonl", "model.ckpt"}


def test_bench_layers_csv(tmp_path, capsys):
    out = tmp_path / "b.csv"
    series = tmp_path / "s.txt"
    rc = main(["bench", "layers", "--sizes", "64..128", "--methods", "dense,butterfly,pixelfly", "--iters", "2",
               "--warmup", "0", "--block-size", "8", "--rank", "2", "--out", str(out), "--series", str(series)])
    assert rc == 0
    assert len(out.read_text().splitlines()) == 2 + 6
    assert config_line(capsys.readouterr().out)["threads"] == 1
    assert len(series.read_text().splitlines()) == 3


def test_bench_skew_json(tmp_path):
    out = tmp_path / "s.json"
    rc = main(["bench", "skew", "--n", "64", "--skews", "0.0625,0.25,1,4,16", "--iters", "1", "--warmup", "0",
               "--format", "json", "--out", str(out)])
    assert rc == 0
    recs = json.loads(out.read_text())["records"]
    assert len(recs) == 5
    assert {r["m"] * r["n"] for r in recs} == {64 * 64}


def test_bench_sparse(tmp_path):
    out = tmp_path / "sp.csv"
    rc = main(["bench", "sparse", "--n", "64", "--sparsities", "0.90,0.99", "--iters", "1", "--warmup", "0",
               "--out", str(out)])
    assert rc == 0
    assert len(out.read_text().splitlines()) == 2 + 4


def test_sweep(tmp_path, capsys):
    out = tmp_path / "sw.json"
    rc = main(["sweep", "--synthetic", "--synthetic-samples", "40", "--n", "64", "--levels", "1,9", "--blocks", "8",
               "--ranks", "2", "--epochs", "1", "--out", str(out)])
    assert rc == 0
    doc = json.loads(out.read_text())
    assert [c["status"][:7] for c in doc["cells"]] == ["ok", "skipped"]
    assert all(s["metrics"]["accuracy"]["max_std"] == 0.0 for s in doc["summaries"])
    assert main(["sweep", "--synthetic", "--levels", "", "--out", str(out)]) == 2
