import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from bfly.data import synthetic_dataset
from bfly.train import (
    BASELINE_PARAMS,
    METHODS,
    ModelConfig,
    TrainConfig,
    TrainingDiverged,
    count_params,
    cross_entropy_loss,
    seeded_model,
    sgd_momentum_step,
    train_shl,
)

EXPECTED_COUNTS = {
    "baseline": 1_059_850,
    "butterfly": 31_754,
    "pixelfly": 404_490,
    "lowrank": 13_322,
    "circulant": 12_298,
    "fastfood": 14_346,
}


def test_default_hyperparameters():
    c = TrainConfig()
    assert (c.learning_rate, c.momentum, c.batch_size, c.validation_fraction) == (0.001, 0.9, 50, 0.15)
    assert c.loss == "cross_entropy" and c.optimizer == "sgd"


@pytest.mark.parametrize("method", METHODS)
def test_param_counts(method):
    assert count_params(seeded_model(ModelConfig(method=method), 0)).total == EXPECTED_COUNTS[method]
    assert BASELINE_PARAMS == EXPECTED_COUNTS["baseline"]


def test_unknown_method():
    with pytest.raises(ValueError, match="valid methods: baseline, butterfly"):
        ModelConfig(method="nosuch")


def test_square_only_methods():
    with pytest.raises(ValueError, match="square"):
        seeded_model(ModelConfig(method="circulant", n_in=64, n_hidden=32), 0)
    assert seeded_model(ModelConfig(method="butterfly", n_in=100, n_hidden=30), 0).forward(np.zeros((1, 100))).shape == (1, 10)


def log_softmax_oracle(z):
    m = max(z)
    return [v - m - np.log(sum(np.exp(u - m) for u in z)) for v in z]


@given(st.lists(st.floats(-50, 50), min_size=2, max_size=6), st.data())
def test_cross_entropy_matches_oracle(row, data):
    label = data.draw(st.integers(0, len(row) - 1))
    loss, grad = cross_entropy_loss(np.array([row]), np.array([label]))
    assert loss == pytest.approx(-log_softmax_oracle(row)[label], abs=1e-9)
    probs = np.exp(log_softmax_oracle(row))
    probs[label] -= 1
    np.testing.assert_allclose(grad[0], probs, atol=1e-12)


def test_cross_entropy_stable_for_large_logits():
    loss, _ = cross_entropy_loss(np.array([[1e4, 0.0]]), np.array([1]))
    assert loss == pytest.approx(1e4)


def test_sgd_momentum_recurrence():
    w = {"w": np.array([1.0])}
    v = {}
    for _ in range(2):
        sgd_momentum_step(w, {"w": np.array([1.0])}, v, lr=0.1, mu=0.9)
    # v1 = 1, w1 = 0.9; v2 = 1.9, w2 = 0.71
    assert v["w"][0] == pytest.approx(1.9)
    assert w["w"][0] == pytest.approx(0.71)
    with pytest.raises(ValueError):
        sgd_momentum_step(w, {"w": np.ones(2)}, v)


@pytest.mark.parametrize("method", METHODS)
def test_every_method_learns_synthetic(method):
    ds = synthetic_dataset(400, rng=np.random.default_rng(1), n_features=64)
    cfg = ModelConfig(method=method, n_in=64, n_hidden=64, block_size=8, pixelfly_rank=4, lowrank_rank=4)
    res = train_shl(seeded_model(cfg, 0), ds, TrainConfig(epochs=8, learning_rate=0.01))
    assert res.history[0].train_loss > res.history[-1].train_loss
    assert res.history[-1].train_acc > 0.3


def test_logs_are_written(tmp_path):
    ds = synthetic_dataset(200, rng=np.random.default_rng(2), n_features=32)
    cfg = ModelConfig(n_in=32, n_hidden=32)
    train_shl(seeded_model(cfg, 0), ds, TrainConfig(epochs=2), metrics_path=tmp_path / "m", timing_path=tmp_path / "t")
    m = (tmp_path / "m").read_text().splitlines()
    t = (tmp_path / "t").read_text().splitlines()
    assert len(m) == len(t) == 2
    assert '"test_acc": null' in m[0] and '"test_acc": null' not in m[1]
    assert "time" not in m[1] and "layer1_time_ms" in t[1]


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_is_reported():
    ds = synthetic_dataset(200, rng=np.random.default_rng(2), n_features=32)
    with pytest.raises(TrainingDiverged, match="epoch 1"):
        train_shl(seeded_model(ModelConfig(n_in=32, n_hidden=32), 0), ds, TrainConfig(epochs=1, learning_rate=1e30))


def test_compression_ratio():
    pc = count_params(seeded_model(ModelConfig(method="circulant"), 0))
    assert pc.compression == pytest.approx(1 - 12298 / 1059850)
