"""CIFAR-10 binary ingestion and a synthetic stand-in for CI.

Images become 1024-dim grayscale vectors: the per-pixel mean of the R, G and
B planes scaled to [0, 1].  This is the only input width consistent with a
1024 -> 1024 -> 10 network of 1,059,850 parameters.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

RECORD_BYTES = 3073
PIXELS = 1024
N_CLASSES = 10
TRAIN_FILES = [f"data_batch_{i}.bin" for i in range(1, 6)]
TEST_FILE = "test_batch.bin"


class DataError(ValueError):
    pass


@dataclass
class Dataset:
    train_x: np.ndarray
    train_y: np.ndarray
    val_x: np.ndarray
    val_y: np.ndarray
    test_x: np.ndarray
    test_y: np.ndarray

    @property
    def n_features(self) -> int:
        return self.train_x.shape[1]

    def split(self, name: str) -> tuple[np.ndarray, np.ndarray]:
        if name not in ("train", "val", "test"):
            raise KeyError(name)
        return getattr(self, f"{name}_x"), getattr(self, f"{name}_y")

    def sizes(self) -> dict[str, int]:
        return {"train": len(self.train_y), "val": len(self.val_y), "test": len(self.test_y)}


def decode_records(raw: bytes, source: str = "<bytes>") -> tuple[np.ndarray, np.ndarray]:
    """Decode 3073-byte records into (N, 1024) float32 grayscale and uint8 labels."""
    if len(raw) == 0 or len(raw) % RECORD_BYTES:
        raise DataError(
            f"{source}: size {len(raw)} bytes is not a positive multiple of the {RECORD_BYTES}-byte record"
        )
    rec = np.frombuffer(raw, dtype=np.uint8).reshape(-1, RECORD_BYTES)
    labels = rec[:, 0].copy()
    if labels.max() >= N_CLASSES:
        bad = int(np.argmax(labels >= N_CLASSES))
        raise DataError(f"{source}: record {bad} has label byte {labels[bad]} > 9")
    planes = rec[:, 1:].reshape(-1, 3, PIXELS).astype(np.uint16)
    gray = planes.sum(axis=1).astype(np.float32) / np.float32(3 * 255)
    return gray, labels


def read_cifar_batch(path) -> tuple[np.ndarray, np.ndarray]:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"missing CIFAR-10 batch file {path}")
    return decode_records(path.read_bytes(), str(path))


def _locate(root: Path) -> Path:
    for candidate in (root, root / "cifar-10-batches-bin"):
        if (candidate / TEST_FILE).is_file():
            return candidate
    raise DataError(f"no CIFAR-10 binary batches ({TEST_FILE}, data_batch_1..5.bin) under {root}")


def cifar10_available(root) -> bool:
    try:
        _locate(Path(root))
    except DataError:
        return False
    return True


def split_validation(x, y, fraction: float, rng: np.random.Generator):
    """Shuffle, then carve the last ``round(fraction * N)`` samples off as validation."""
    if not 0.0 <= fraction < 1.0:
        raise ValueError(f"validation fraction must lie in [0, 1), got {fraction}")
    order = rng.permutation(len(y))
    x, y = x[order], y[order]
    n_val = int(round(fraction * len(y)))
    cut = len(y) - n_val
    return x[:cut], y[:cut], x[cut:], y[cut:]


def load_cifar10(root, validation_fraction: float = 0.15, seed: int = 0) -> Dataset:
    base = _locate(Path(root))
    parts = [read_cifar_batch(base / name) for name in TRAIN_FILES]
    x = np.concatenate([p[0] for p in parts])
    y = np.concatenate([p[1] for p in parts])
    test_x, test_y = read_cifar_batch(base / TEST_FILE)
    tx, ty, vx, vy = split_validation(x, y, validation_fraction, np.random.default_rng(seed))
    return Dataset(tx, ty, vx, vy, test_x, test_y)


def synthetic_dataset(
    n_samples: int,
    n_classes: int = N_CLASSES,
    rng: np.random.Generator | None = None,
    *,
    n_features: int = PIXELS,
    n_test: int | None = None,
    validation_fraction: float = 0.15,
    noise: float = 0.15,
) -> Dataset:
    """Class-conditional Gaussian blobs clipped to [0, 1].

    Class means are drawn from U(0.2, 0.8)^d, so two means differ by about
    ``0.25 * sqrt(d)`` while per-sample noise has norm ``noise * sqrt(d)``;
    with the defaults the classes are linearly separable with a wide margin.
    Labels are balanced (round-robin, then shuffled).  ``n_samples`` is the
    train+validation pool; the test split is drawn separately.
    """
    if n_samples < n_classes:
        raise ValueError(f"need at least one sample per class: n_samples={n_samples} < n_classes={n_classes}")
    rng = rng if rng is not None else np.random.default_rng(0)
    means = rng.uniform(0.2, 0.8, size=(n_classes, n_features))

    def draw(count):
        labels = rng.permutation(np.arange(count) % n_classes).astype(np.uint8)
        x = means[labels] + noise * rng.standard_normal((count, n_features))
        return np.clip(x, 0.0, 1.0).astype(np.float32), labels

    x, y = draw(n_samples)
    test_x, test_y = draw(n_test if n_test is not None else max(n_classes, n_samples // 5))
    tx, ty, vx, vy = split_validation(x, y, validation_fraction, rng)
    return Dataset(tx, ty, vx, vy, test_x, test_y)
