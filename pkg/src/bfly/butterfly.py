"""Butterfly factorization ``T = B P`` as a learnable linear operator.

A layer of size ``n = 2**k`` stores ``k`` levels.  Level ``l`` (1-based) mixes
index pairs ``(i, i + 2**(l-1))`` with a 2x2 block ``[[a, b], [c, d]]``, one
block per pair.  Application order is: permutation first, then the levels by
increasing stride, i.e. decimation-in-time.

Relation to the four-diagonal form ``[[D1, D2], [D3, D4]]``: for the level of
stride ``s``, within every block of ``2s`` consecutive indices, ``D1..D4`` are
the diagonals holding the ``a``, ``b``, ``c`` and ``d`` values of the ``s``
pairs in that block.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .core import OpCounter, ShapeError, is_power_of_two, log2_exact


class Init(str, enum.Enum):
    IDENTITY = "identity"
    GIVENS = "givens"
    UNIFORM_SCALED = "uniform_scaled"


@dataclass(frozen=True)
class Permutation:
    """``map[i]`` is the source index feeding output slot ``i``."""

    map: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.map, dtype=np.int64)
        object.__setattr__(self, "map", m)
        if m.ndim != 1 or not np.array_equal(np.sort(m), np.arange(len(m))):
            raise ValueError("permutation map must be a bijection on 0..n-1")

    @classmethod
    def identity(cls, n: int) -> "Permutation":
        return cls(np.arange(n))

    @property
    def n(self) -> int:
        return len(self.map)

    def is_identity(self) -> bool:
        return bool(np.array_equal(self.map, np.arange(self.n)))

    def apply(self, x: np.ndarray) -> np.ndarray:
        return x[..., self.map]

    def apply_transpose(self, y: np.ndarray) -> np.ndarray:
        out = np.empty_like(y)
        out[..., self.map] = y
        return out

    def inverse(self) -> "Permutation":
        return Permutation(np.argsort(self.map))

    def matrix(self) -> np.ndarray:
        p = np.zeros((self.n, self.n))
        p[np.arange(self.n), self.map] = 1.0
        return p


def bit_reversal_permutation(n: int) -> Permutation:
    bits = log2_exact(n)
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.int64)
    for b in range(bits):
        rev |= ((idx >> b) & 1) << (bits - 1 - b)
    return Permutation(rev)


@dataclass
class ButterflyLevel:
    """One butterfly factor.  ``coeffs[p] = (a, b, c, d)`` for pair ``p``.

    Pair ``p`` covers indices ``i = (p // stride) * 2 * stride + p % stride``
    and ``j = i + stride``.
    """

    level_index: int
    coeffs: np.ndarray

    def __post_init__(self):
        if self.coeffs.ndim != 2 or self.coeffs.shape[1] != 4:
            raise ShapeError(f"coeffs must have shape (n/2, 4), got {self.coeffs.shape}")
        if self.n % (2 * self.stride):
            raise ShapeError(f"level {self.level_index} stride {self.stride} does not tile n={self.n}")

    @property
    def stride(self) -> int:
        return 1 << (self.level_index - 1)

    @property
    def n(self) -> int:
        return 2 * self.coeffs.shape[0]

    def pair_indices(self) -> tuple[np.ndarray, np.ndarray]:
        p = np.arange(self.n // 2)
        i = (p // self.stride) * 2 * self.stride + p % self.stride
        return i, i + self.stride

    def matrix(self) -> np.ndarray:
        i, j = self.pair_indices()
        m = np.zeros((self.n, self.n), dtype=self.coeffs.dtype)
        a, b, c, d = self.coeffs.T
        m[i, i], m[i, j], m[j, i], m[j, j] = a, b, c, d
        return m


@dataclass
class ButterflyGrads:
    levels: list[np.ndarray]
    input: np.ndarray
    bias: np.ndarray | None = None


def _split(x: np.ndarray, stride: int):
    batch, n = x.shape
    v = x.reshape(batch, n // (2 * stride), 2, stride)
    return v[:, :, 0, :], v[:, :, 1, :]


def _apply_level(x: np.ndarray, level: ButterflyLevel, counter: OpCounter | None) -> np.ndarray:
    s = level.stride
    xi, xj = _split(x, s)
    c = level.coeffs.reshape(level.n // (2 * s), s, 4)
    a, b, cc, d = c[..., 0], c[..., 1], c[..., 2], c[..., 3]
    y = np.empty(x.shape, dtype=np.result_type(x, level.coeffs))
    yi, yj = _split(y, s)
    yi[...] = a * xi + b * xj
    yj[...] = cc * xi + d * xj
    if counter is not None:
        counter.mults += 4 * xi.size
        counter.adds += 2 * xi.size
    return y


class ButterflyLayer:
    """``y = B (P x) + bias`` over a batch of row vectors."""

    kind = "butterfly"

    def __init__(self, levels: list[ButterflyLevel], permutation: Permutation, bias: np.ndarray | None = None):
        n = permutation.n
        if not is_power_of_two(n):
            raise ValueError(f"butterfly size must be a power of two, got n={n}")
        if len(levels) != log2_exact(n):
            raise ShapeError(f"n={n} needs {log2_exact(n)} levels, got {len(levels)}")
        for ell, level in enumerate(levels, start=1):
            if level.level_index != ell or level.n != n:
                raise ShapeError(f"level {ell} does not match layer size {n}")
        if bias is not None and bias.shape != (n,):
            raise ShapeError(f"bias must have shape ({n},), got {bias.shape}")
        self.n = n
        self.levels = levels
        self.permutation = permutation
        self.bias = bias
        self.grads: dict[str, np.ndarray] = {}
        self._cache = None

    @property
    def params(self) -> dict[str, np.ndarray]:
        p = {f"level{lv.level_index}": lv.coeffs for lv in self.levels}
        if self.bias is not None:
            p["bias"] = self.bias
        return p

    def param_count(self) -> int:
        return sum(v.size for v in self.params.values())

    def config(self) -> dict:
        return {"kind": self.kind, "n": self.n, "bias": self.bias is not None}

    def buffers(self) -> dict[str, np.ndarray]:
        return {"permutation": self.permutation.map}

    def load_buffers(self, buffers: dict) -> None:
        if "permutation" in buffers:
            self.permutation = Permutation(buffers["permutation"])

    def forward(self, x, counter: OpCounter | None = None, cache: bool = True) -> np.ndarray:
        x = np.asarray(x)
        single = x.ndim == 1
        x2 = x[None, :] if single else x
        if x2.ndim != 2 or x2.shape[1] != self.n:
            raise ShapeError(f"expected inputs of length {self.n}, got shape {x.shape}")
        h = self.permutation.apply(x2)
        inputs = []
        for level in self.levels:
            inputs.append(h)
            h = _apply_level(h, level, counter)
        if self.bias is not None:
            h = h + self.bias
        self._cache = (x2.shape, inputs) if cache else None
        return h[0] if single else h

    __call__ = forward

    def backward(self, dy) -> np.ndarray:
        """Fill ``self.grads`` and return the input gradient."""
        if self._cache is None:
            raise RuntimeError("backward called without a cached forward pass")
        dy = np.asarray(dy)
        single = dy.ndim == 1
        g = dy[None, :] if single else dy
        shape, inputs = self._cache
        if g.shape != shape:
            raise ShapeError(f"upstream gradient shape {dy.shape} does not match forward batch {shape}")
        grads = {}
        if self.bias is not None:
            grads["bias"] = g.sum(axis=0)
        for level, h in zip(reversed(self.levels), reversed(inputs)):
            s = level.stride
            xi, xj = _split(h, s)
            gi, gj = _split(g, s)
            coeff_grad = np.stack(
                [(gi * xi).sum(axis=0), (gi * xj).sum(axis=0), (gj * xi).sum(axis=0), (gj * xj).sum(axis=0)],
                axis=-1,
            )
            grads[f"level{level.level_index}"] = coeff_grad.reshape(self.n // 2, 4)
            c = level.coeffs.reshape(self.n // (2 * s), s, 4)
            a, b, cc, d = c[..., 0], c[..., 1], c[..., 2], c[..., 3]
            dx = np.empty_like(g)
            di, dj = _split(dx, s)
            di[...] = a * gi + cc * gj
            dj[...] = b * gi + d * gj
            g = dx
        dx = self.permutation.apply_transpose(g)
        self.grads = grads
        return dx[0] if single else dx

    def dense(self) -> np.ndarray:
        return dense_reconstruct(self)


def butterfly_new(
    n: int,
    init: Init | str = Init.GIVENS,
    rng: np.random.Generator | None = None,
    *,
    permutation: Permutation | None = None,
    bias: bool = False,
    dtype=np.float64,
) -> ButterflyLayer:
    if not is_power_of_two(n):
        raise ValueError(f"butterfly size must be a power of two, got n={n}")
    init = Init(init)
    rng = rng if rng is not None else np.random.default_rng(0)
    half = n // 2
    levels = []
    for ell in range(1, log2_exact(n) + 1):
        if init is Init.IDENTITY:
            coeffs = np.tile(np.array([1.0, 0.0, 0.0, 1.0]), (half, 1))
        elif init is Init.GIVENS:
            theta = rng.uniform(0.0, 2 * np.pi, size=half)
            cos, sin = np.cos(theta), np.sin(theta)
            coeffs = np.stack([cos, sin, -sin, cos], axis=-1)
        else:
            bound = 1.0 / np.sqrt(2.0)
            coeffs = rng.uniform(-bound, bound, size=(half, 4))
        levels.append(ButterflyLevel(ell, coeffs.astype(dtype)))
    perm = permutation if permutation is not None else Permutation.identity(n)
    return ButterflyLayer(levels, perm, np.zeros(n, dtype=dtype) if bias else None)


def butterfly_apply(layer: ButterflyLayer, x, counter: OpCounter | None = None) -> np.ndarray:
    return layer.forward(x, counter=counter, cache=False)


def butterfly_backward(layer: ButterflyLayer, x, dy) -> ButterflyGrads:
    """Forward with caching, then the analytic backward pass."""
    layer.forward(x)
    dx = layer.backward(dy)
    g = layer.grads
    return ButterflyGrads(
        levels=[g[f"level{lv.level_index}"] for lv in layer.levels],
        input=dx,
        bias=g.get("bias"),
    )


def dense_reconstruct(layer: ButterflyLayer) -> np.ndarray:
    """Explicit ``B_k ... B_1 P`` as an n x n matrix (no bias)."""
    t = layer.permutation.matrix().astype(np.result_type(*(lv.coeffs for lv in layer.levels), np.float64))
    for level in layer.levels:
        t = level.matrix() @ t
    return t


def butterfly_param_count(n: int, bias: bool = False) -> int:
    return 2 * n * log2_exact(n) + (n if bias else 0)


def fft_configure(n: int, inverse: bool = False) -> ButterflyLayer:
    """Complex butterfly layer computing the unnormalized DFT of length n.

    With ``inverse=True`` the twiddles are conjugated, giving ``n`` times the
    inverse DFT.
    """
    if not is_power_of_two(n):
        raise ValueError(f"FFT size must be a power of two, got n={n}")
    sign = 1.0 if inverse else -1.0
    levels = []
    for ell in range(1, log2_exact(n) + 1):
        s = 1 << (ell - 1)
        offset = np.arange(n // 2) % s
        w = np.exp(sign * 2j * np.pi * offset / (2 * s))
        coeffs = np.stack([np.ones_like(w), w, np.ones_like(w), -w], axis=-1)
        levels.append(ButterflyLevel(ell, coeffs))
    return ButterflyLayer(levels, bit_reversal_permutation(n))


_FFT_CACHE: dict[tuple[int, bool], ButterflyLayer] = {}


def fft(x, inverse: bool = False) -> np.ndarray:
    """Unnormalized DFT along the last axis through a cached butterfly plan."""
    x = np.asarray(x, dtype=np.complex128)
    n = x.shape[-1]
    key = (n, inverse)
    if key not in _FFT_CACHE:
        _FFT_CACHE[key] = fft_configure(n, inverse)
    plan = _FFT_CACHE[key]
    flat = x.reshape(-1, n)
    return plan.forward(flat, cache=False).reshape(x.shape)


def ifft(x) -> np.ndarray:
    x = np.asarray(x)
    return fft(x, inverse=True) / x.shape[-1]


class PaddedButterfly:
    """Butterfly for arbitrary in/out sizes: zero-pad to a power of two, truncate the output."""

    kind = "padded_butterfly"

    def __init__(self, in_features: int, out_features: int, rng=None, bias: bool = True, dtype=np.float64):
        n = 1 << max(in_features - 1, out_features - 1, 0).bit_length()
        self.in_features = in_features
        self.out_features = out_features
        self.inner = butterfly_new(n, Init.GIVENS, rng, permutation=bit_reversal_permutation(n), dtype=dtype)
        self.bias = np.zeros(out_features, dtype=dtype) if bias else None
        self.grads: dict[str, np.ndarray] = {}

    @property
    def params(self):
        p = dict(self.inner.params)
        if self.bias is not None:
            p["bias"] = self.bias
        return p

    def param_count(self) -> int:
        return sum(v.size for v in self.params.values())

    def config(self) -> dict:
        return {"kind": self.kind, "in": self.in_features, "out": self.out_features, "bias": self.bias is not None}

    def buffers(self):
        return self.inner.buffers()

    def load_buffers(self, buffers):
        self.inner.load_buffers(buffers)

    def forward(self, x, cache=True):
        x = np.asarray(x)
        pad = np.zeros(x.shape[:-1] + (self.inner.n,), dtype=x.dtype)
        pad[..., : self.in_features] = x
        y = self.inner.forward(pad, cache=cache)[..., : self.out_features]
        return y + self.bias if self.bias is not None else y

    __call__ = forward

    def backward(self, dy):
        dy = np.asarray(dy)
        full = np.zeros(dy.shape[:-1] + (self.inner.n,), dtype=dy.dtype)
        full[..., : self.out_features] = dy
        dx = self.inner.backward(full)
        self.grads = dict(self.inner.grads)
        if self.bias is not None:
            self.grads["bias"] = dy.reshape(-1, self.out_features).sum(axis=0)
        return dx[..., : self.in_features]
