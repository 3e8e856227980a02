"""Pixelated butterfly: flat block-butterfly sparse term plus a low-rank term.

The sparse term lives on the union of the block-level butterfly factor
supports.  On an ``m x m`` grid of ``b x b`` blocks, block ``(i, j)`` is in the
support iff ``j == i`` or ``j == i ^ 2**t`` for a retained level ``t``.
Values are learned directly on that support; no identity residual is added.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import ShapeError, is_power_of_two


@dataclass(frozen=True)
class BlockButterflyMask:
    n: int
    block_size: int
    levels: int
    # block_cols[i] = sorted block columns present in block row i
    block_cols: np.ndarray

    @property
    def grid(self) -> int:
        return self.n // self.block_size

    @property
    def blocks_per_row(self) -> int:
        return self.block_cols.shape[1]

    @property
    def support(self) -> list[tuple[int, int]]:
        return [(i, int(j)) for i in range(self.grid) for j in self.block_cols[i]]

    @property
    def nnz(self) -> int:
        return self.block_size**2 * self.block_cols.size

    def block_pattern(self) -> np.ndarray:
        """Boolean m x m matrix of supported blocks."""
        p = np.zeros((self.grid, self.grid), dtype=bool)
        p[np.repeat(np.arange(self.grid), self.blocks_per_row), self.block_cols.ravel()] = True
        return p

    def scalar_pattern(self) -> np.ndarray:
        return np.kron(self.block_pattern(), np.ones((self.block_size, self.block_size), dtype=bool))


def build_mask(n: int, block_size: int, levels: int | None = None) -> BlockButterflyMask:
    """Block-butterfly support for an n x n operator.

    ``levels`` keeps the first ``levels`` XOR bands (strides 1, 2, 4, ...);
    ``None`` keeps all ``log2(n / block_size)`` of them.
    """
    if block_size < 1 or n % block_size:
        raise ValueError(f"block size {block_size} must divide n={n}")
    m = n // block_size
    if not is_power_of_two(m):
        raise ValueError(f"grid size n/block_size = {n}/{block_size} = {m} must be a power of two")
    full = m.bit_length() - 1
    if levels is None:
        levels = full
    if not 0 <= levels <= full:
        raise ValueError(f"levels must lie in [0, {full}] for n={n}, block_size={block_size}, got {levels}")
    rows = np.arange(m)
    cols = [rows] + [rows ^ (1 << t) for t in range(levels)]
    block_cols = np.sort(np.stack(cols, axis=1), axis=1)
    return BlockButterflyMask(n, block_size, levels, block_cols)


def pixelfly_param_count(n: int, block_size: int, rank: int, levels: int | None = None, bias: bool = False) -> int:
    m = n // block_size
    if levels is None:
        levels = m.bit_length() - 1
    return block_size**2 * m * (1 + levels) + 2 * n * rank + (n if bias else 0)


class PixelflyLayer:
    """``y = S x + U (V x) + bias``.

    ``values[i, t]`` is the dense ``b x b`` block at block position
    ``(i, mask.block_cols[i, t])`` (block-row-major storage).
    """

    kind = "pixelfly"

    def __init__(self, mask: BlockButterflyMask, values, u, v, bias=None):
        b = mask.block_size
        if values.shape != (mask.grid, mask.blocks_per_row, b, b):
            raise ShapeError(f"values shape {values.shape} does not match mask")
        r = u.shape[1]
        if u.shape != (mask.n, r) or v.shape != (r, mask.n):
            raise ShapeError(f"low-rank factors must be ({mask.n}, r) and (r, {mask.n}), got {u.shape}, {v.shape}")
        self.mask = mask
        self.values = values
        self.u = u
        self.v = v
        self.bias = bias
        self.grads: dict[str, np.ndarray] = {}
        self._cache = None

    @property
    def n(self) -> int:
        return self.mask.n

    @property
    def rank(self) -> int:
        return self.u.shape[1]

    @property
    def params(self) -> dict[str, np.ndarray]:
        p = {"values": self.values, "u": self.u, "v": self.v}
        if self.bias is not None:
            p["bias"] = self.bias
        return p

    def param_count(self) -> int:
        return sum(a.size for a in self.params.values())

    def config(self) -> dict:
        return {
            "kind": self.kind,
            "n": self.n,
            "block_size": self.mask.block_size,
            "rank": self.rank,
            "levels": self.mask.levels,
            "bias": self.bias is not None,
        }

    def buffers(self) -> dict[str, np.ndarray]:
        return {}

    def load_buffers(self, buffers: dict) -> None:
        pass

    def _gather(self, x2):
        """(m, batch, d*b): the input blocks each block row reads."""
        m, b, d = self.mask.grid, self.mask.block_size, self.mask.blocks_per_row
        xb = x2.reshape(len(x2), m, b).transpose(1, 0, 2)
        return xb[self.mask.block_cols].transpose(0, 2, 1, 3).reshape(m, len(x2), d * b)

    def _stacked(self):
        """(m, d*b, b) view of the values, row-block m stacked along the input axis."""
        m, b, d = self.mask.grid, self.mask.block_size, self.mask.blocks_per_row
        return self.values.transpose(0, 1, 3, 2).reshape(m, d * b, b)

    def forward(self, x, cache: bool = True) -> np.ndarray:
        x = np.asarray(x)
        single = x.ndim == 1
        x2 = x[None, :] if single else x
        if x2.ndim != 2 or x2.shape[1] != self.n:
            raise ShapeError(f"expected inputs of length {self.n}, got shape {x.shape}")
        gathered = self._gather(x2)
        # per block row m: (batch, d*b) @ (d*b, b)
        y = np.matmul(gathered, self._stacked()).transpose(1, 0, 2).reshape(len(x2), self.n)
        vx = x2 @ self.v.T
        if self.rank:
            y = y + vx @ self.u.T
        if self.bias is not None:
            y = y + self.bias
        self._cache = (x2, gathered, vx) if cache else None
        return y[0] if single else y

    __call__ = forward

    def backward(self, dy) -> np.ndarray:
        if self._cache is None:
            raise RuntimeError("backward called without a cached forward pass")
        x2, gathered, vx = self._cache
        dy = np.asarray(dy)
        single = dy.ndim == 1
        g = dy[None, :] if single else dy
        if g.shape != x2.shape:
            raise ShapeError(f"upstream gradient shape {dy.shape} does not match forward batch {x2.shape}")
        m, b, d = self.mask.grid, self.mask.block_size, self.mask.blocks_per_row
        gb = g.reshape(len(g), m, b).transpose(1, 0, 2)  # (m, batch, b)
        gv = np.matmul(gathered.transpose(0, 2, 1), gb)  # (m, d*b, b): [m, (t, j), i]
        grads = {"values": gv.reshape(m, d, b, b).transpose(0, 1, 3, 2)}
        contrib = np.matmul(gb, self._stacked().transpose(0, 2, 1))  # (m, batch, d*b)
        contrib = contrib.reshape(m, len(g), d, b).transpose(0, 2, 1, 3).reshape(m * d, len(g), b)
        dxb = np.zeros((m, len(g), b), dtype=contrib.dtype)
        np.add.at(dxb, self.mask.block_cols.ravel(), contrib)
        dx = dxb.transpose(1, 0, 2).reshape(len(g), self.n)
        ut_dy = g @ self.u
        grads["u"] = g.T @ vx
        grads["v"] = ut_dy.T @ x2
        dx = dx + ut_dy @ self.v
        if self.bias is not None:
            grads["bias"] = g.sum(axis=0)
        self.grads = grads
        return dx[0] if single else dx

    def dense(self) -> np.ndarray:
        return dense_reconstruct_pixelfly(self)


def pixelfly_new(
    n: int,
    block_size: int,
    rank: int,
    rng: np.random.Generator | None = None,
    *,
    levels: int | None = None,
    init: str = "uniform",
    bias: bool = False,
    dtype=np.float64,
) -> PixelflyLayer:
    """``init="uniform"`` draws values from U(-1/sqrt(fan), 1/sqrt(fan)) with
    fan the per-row support size, and U, V from U(-1/sqrt(n), 1/sqrt(n));
    ``init="zeros"`` gives the zero operator."""
    mask = build_mask(n, block_size, levels)
    if not 0 <= rank <= n:
        raise ValueError(f"rank must lie in [0, n={n}], got {rank}")
    rng = rng if rng is not None else np.random.default_rng(0)
    shape = (mask.grid, mask.blocks_per_row, block_size, block_size)
    if init == "zeros":
        values = np.zeros(shape)
        u = np.zeros((n, rank))
        v = np.zeros((rank, n))
    elif init == "uniform":
        fan = mask.blocks_per_row * block_size
        values = rng.uniform(-1.0, 1.0, size=shape) / np.sqrt(fan)
        u = rng.uniform(-1.0, 1.0, size=(n, rank)) / np.sqrt(n)
        v = rng.uniform(-1.0, 1.0, size=(rank, n)) / np.sqrt(n)
    else:
        raise ValueError(f"unknown init {init!r}")
    return PixelflyLayer(
        mask,
        values.astype(dtype),
        u.astype(dtype),
        v.astype(dtype),
        np.zeros(n, dtype=dtype) if bias else None,
    )


def pixelfly_apply(layer: PixelflyLayer, x) -> np.ndarray:
    return layer.forward(x, cache=False)


def pixelfly_backward(layer: PixelflyLayer, x, dy) -> dict[str, np.ndarray]:
    """Gradients for every parameter plus ``"input"``."""
    layer.forward(x)
    dx = layer.backward(dy)
    return {**layer.grads, "input": dx}


def sparse_dense(layer: PixelflyLayer) -> np.ndarray:
    """The sparse term S as an n x n matrix."""
    m, b = layer.mask.grid, layer.mask.block_size
    s = np.zeros((m, b, m, b), dtype=layer.values.dtype)
    rows = np.repeat(np.arange(m), layer.mask.blocks_per_row)
    s[rows, :, layer.mask.block_cols.ravel(), :] = layer.values.reshape(-1, b, b)
    return s.reshape(layer.n, layer.n)


def dense_reconstruct_pixelfly(layer: PixelflyLayer) -> np.ndarray:
    return sparse_dense(layer) + layer.u @ layer.v
