"""Single-hidden-layer benchmark: model, loss, optimizer and training loop."""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .baselines import CirculantLayer, DenseLinearLayer, FastfoodLayer, LowRankLayer
from .butterfly import Init, PaddedButterfly, bit_reversal_permutation, butterfly_new
from .core import is_power_of_two
from .data import Dataset
from .pixelfly import pixelfly_new

METHODS = ("baseline", "butterfly", "pixelfly", "lowrank", "circulant", "fastfood")
BASELINE_PARAMS = 1_059_850


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch: int, loss: float):
        super().__init__(f"loss became {loss} during epoch {epoch}")
        self.epoch = epoch
        self.loss = loss


@dataclass
class TrainConfig:
    learning_rate: float = 0.001
    momentum: float = 0.9
    batch_size: int = 50
    loss: str = "cross_entropy"
    optimizer: str = "sgd"
    validation_fraction: float = 0.15
    epochs: int = 30
    seed: int = 0
    dtype: str = "float32"
    center_inputs: bool = True


@dataclass
class ModelConfig:
    """Shape of the SHL network and the knobs of its first layer.

    The defaults for the structured layers (low-rank rank 1, pixelfly block 64
    and rank 32, bias on layer 1) are the settings whose parameter totals match
    the reference SHL counts for those methods.
    """

    method: str = "baseline"
    n_in: int = 1024
    n_hidden: int = 1024
    n_classes: int = 10
    bias: bool = True
    lowrank_rank: int = 1
    block_size: int = 64
    pixelfly_rank: int = 32
    levels: int | None = None

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; valid methods: {', '.join(METHODS)}")


def make_layer1(cfg: ModelConfig, rng: np.random.Generator, dtype=np.float32):
    n_in, n_out = cfg.n_in, cfg.n_hidden
    square = n_in == n_out
    if cfg.method == "baseline":
        return DenseLinearLayer.create(n_in, n_out, rng, bias=cfg.bias, dtype=dtype)
    if cfg.method == "lowrank":
        return LowRankLayer.create(n_in, n_out, cfg.lowrank_rank, rng, bias=cfg.bias, dtype=dtype)
    if cfg.method == "butterfly":
        if square and is_power_of_two(n_in):
            return butterfly_new(
                n_in, Init.GIVENS, rng, permutation=bit_reversal_permutation(n_in), bias=cfg.bias, dtype=dtype
            )
        return PaddedButterfly(n_in, n_out, rng, bias=cfg.bias, dtype=dtype)
    if not square:
        raise ValueError(f"method {cfg.method!r} needs a square first layer, got {n_in} -> {n_out}")
    if cfg.method == "pixelfly":
        return pixelfly_new(
            n_in, cfg.block_size, cfg.pixelfly_rank, rng, levels=cfg.levels, bias=cfg.bias, dtype=dtype
        )
    if cfg.method == "circulant":
        return CirculantLayer.create(n_in, rng, bias=cfg.bias, dtype=dtype)
    return FastfoodLayer.create(n_in, rng, bias=cfg.bias, dtype=dtype)


class ShlModel:
    """input -> (optional fixed shift) -> layer1 -> ReLU -> dense classifier.

    ``input_shift`` is a non-learned buffer (the training-set mean image when
    inputs are centred); it is not counted as a parameter.
    """

    def __init__(self, config: ModelConfig, layer1, layer2: DenseLinearLayer, input_shift=None):
        self.config = config
        self.layer1 = layer1
        self.layer2 = layer2
        self.input_shift = input_shift
        self._hidden = None

    @classmethod
    def create(cls, config: ModelConfig, rng: np.random.Generator, dtype=np.float32) -> "ShlModel":
        layer1 = make_layer1(config, rng, dtype)
        layer2 = DenseLinearLayer.create(config.n_hidden, config.n_classes, rng, bias=True, dtype=dtype)
        return cls(config, layer1, layer2)

    @property
    def layers(self):
        return {"layer1": self.layer1, "layer2": self.layer2}

    @property
    def dtype(self):
        return self.layer2.weight.dtype

    def named_params(self) -> dict[str, np.ndarray]:
        return {f"{ln}.{pn}": arr for ln, layer in self.layers.items() for pn, arr in layer.params.items()}

    def named_grads(self) -> dict[str, np.ndarray]:
        return {f"{ln}.{pn}": arr for ln, layer in self.layers.items() for pn, arr in layer.grads.items()}

    def prepare(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=self.dtype)
        return x - self.input_shift if self.input_shift is not None else x

    def forward(self, x, cache: bool = True) -> np.ndarray:
        h = self.layer1.forward(self.prepare(x), cache=cache)
        self._hidden = h if cache else None
        return self.layer2.forward(np.maximum(h, 0), cache=cache)

    __call__ = forward

    def backward(self, dlogits) -> np.ndarray:
        da = self.layer2.backward(dlogits)
        return self.layer1.backward(da * (self._hidden > 0))

    def predict(self, x, chunk: int = 1000) -> np.ndarray:
        x = np.asarray(x, dtype=self.dtype)
        return np.concatenate([self.forward(x[i : i + chunk], cache=False).argmax(axis=1) for i in range(0, len(x), chunk)])

    def accuracy(self, x, y) -> float:
        if len(y) == 0:
            return float("nan")
        return float(np.mean(self.predict(x) == y))


@dataclass
class ParamCount:
    total: int
    per_layer: dict[str, int]

    @property
    def compression(self) -> float:
        return 1.0 - self.total / BASELINE_PARAMS


def count_params(model: ShlModel) -> ParamCount:
    per_layer = {name: layer.param_count() for name, layer in model.layers.items()}
    return ParamCount(sum(per_layer.values()), per_layer)


def cross_entropy_loss(logits, labels) -> tuple[float, np.ndarray]:
    """Mean negative log-softmax of the true class, and its gradient."""
    logits = np.asarray(logits)
    labels = np.asarray(labels)
    batch = logits.shape[0]
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    total = exp.sum(axis=1, keepdims=True)
    log_probs = shifted - np.log(total)
    loss = float(-log_probs[np.arange(batch), labels].mean())
    grad = exp / total
    grad[np.arange(batch), labels] -= 1.0
    return loss, grad / batch


def sgd_momentum_step(params: dict, grads: dict, velocity: dict, lr: float = 0.001, mu: float = 0.9):
    """Classical momentum, in place: ``v <- mu v + g``, ``w <- w - lr v``."""
    for name, w in params.items():
        g = grads[name]
        if g.shape != w.shape:
            raise ValueError(f"gradient for {name} has shape {g.shape}, parameter has {w.shape}")
        v = velocity.get(name)
        if v is None:
            v = velocity[name] = np.zeros_like(w)
        v *= mu
        v += g
        w -= lr * v
    return params, velocity


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    train_acc: float
    val_acc: float
    test_acc: float | None
    layer1_time_ms: float
    cumulative_time_s: float

    METRIC_FIELDS = ("epoch", "train_loss", "train_acc", "val_acc", "test_acc")
    TIMING_FIELDS = ("epoch", "layer1_time_ms", "cumulative_time_s")

    def metrics(self) -> dict:
        return {k: getattr(self, k) for k in self.METRIC_FIELDS}

    def timing(self) -> dict:
        return {k: getattr(self, k) for k in self.TIMING_FIELDS}


@dataclass
class TrainResult:
    history: list[EpochRecord]
    val_acc: float
    test_acc: float
    total_time_s: float
    layer1_time_s: float
    params: ParamCount = field(default=None)


def _append_jsonl(path, record: dict):
    with open(path, "a") as fh:
        fh.write(json.dumps(record) + "\n")


def train_shl(
    model: ShlModel,
    dataset: Dataset,
    config: TrainConfig,
    *,
    metrics_path=None,
    timing_path=None,
    progress=None,
) -> TrainResult:
    """Mini-batch SGD with momentum on cross-entropy.

    Only the first layer's forward and backward are timed.  The metrics log
    holds deterministic values only, timings go to a separate file, so two
    runs with equal seeds write byte-identical metrics logs.
    """
    dtype = model.dtype
    if config.center_inputs and model.input_shift is None:
        model.input_shift = np.asarray(dataset.train_x, dtype=np.float64).mean(axis=0).astype(dtype)
    train_x = np.asarray(dataset.train_x, dtype=dtype)
    inputs = model.prepare(train_x)
    train_y = np.asarray(dataset.train_y)
    shuffle_rng = np.random.default_rng(np.random.SeedSequence([config.seed, 1]))
    params = model.named_params()
    velocity: dict[str, np.ndarray] = {}
    for path in (metrics_path, timing_path):
        if path is not None:
            Path(path).write_text("")

    history = []
    layer1_total = 0.0
    start = time.perf_counter()
    for epoch in range(1, config.epochs + 1):
        order = shuffle_rng.permutation(len(train_y))
        losses = []
        layer1_epoch = 0.0
        for lo in range(0, len(order), config.batch_size):
            idx = order[lo : lo + config.batch_size]
            xb, yb = inputs[idx], train_y[idx]
            t0 = time.perf_counter()
            h = model.layer1.forward(xb)
            layer1_epoch += time.perf_counter() - t0
            logits = model.layer2.forward(np.maximum(h, 0))
            loss, dlogits = cross_entropy_loss(logits, yb)
            if not np.isfinite(loss):
                raise TrainingDiverged(epoch, loss)
            losses.append(loss)
            da = model.layer2.backward(dlogits.astype(dtype))
            t0 = time.perf_counter()
            model.layer1.backward(da * (h > 0))
            layer1_epoch += time.perf_counter() - t0
            sgd_momentum_step(params, model.named_grads(), velocity, config.learning_rate, config.momentum)
        layer1_total += layer1_epoch
        last = epoch == config.epochs
        record = EpochRecord(
            epoch=epoch,
            train_loss=float(np.mean(losses)),
            train_acc=model.accuracy(train_x, train_y),
            val_acc=model.accuracy(dataset.val_x, dataset.val_y),
            test_acc=model.accuracy(dataset.test_x, dataset.test_y) if last else None,
            layer1_time_ms=layer1_epoch * 1e3,
            cumulative_time_s=time.perf_counter() - start,
        )
        history.append(record)
        if metrics_path is not None:
            _append_jsonl(metrics_path, record.metrics())
        if timing_path is not None:
            _append_jsonl(timing_path, record.timing())
        if progress is not None:
            progress(record)

    val_acc = history[-1].val_acc if history else model.accuracy(dataset.val_x, dataset.val_y)
    test_acc = history[-1].test_acc if history else model.accuracy(dataset.test_x, dataset.test_y)
    return TrainResult(
        history=history,
        val_acc=val_acc,
        test_acc=test_acc,
        total_time_s=time.perf_counter() - start,
        layer1_time_s=layer1_total,
        params=count_params(model),
    )


def seeded_model(config: ModelConfig, seed: int, dtype=np.float32) -> ShlModel:
    return ShlModel.create(config, np.random.default_rng(np.random.SeedSequence([seed, 0])), dtype)


def config_dict(train: TrainConfig, model: ModelConfig) -> dict:
    return {"train": asdict(train), "model": asdict(model)}
