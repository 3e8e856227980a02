"""Comparison layers: dense, low-rank, circulant and Fastfood.

All layers share the same small protocol as the structured layers:
``forward(x)`` caches what ``backward(dy)`` needs, ``backward`` fills
``self.grads`` and returns the input gradient, ``params`` maps names to the
(mutable) parameter arrays.
"""

from __future__ import annotations

import numpy as np

from .butterfly import Permutation, fft, ifft
from .core import OpCounter, ShapeError, is_power_of_two, log2_exact

IMAG_TOL = 1e-9


def _batch(x, n):
    x = np.asarray(x)
    single = x.ndim == 1
    x2 = x[None, :] if single else x
    if x2.ndim != 2 or x2.shape[1] != n:
        raise ShapeError(f"expected inputs of length {n}, got shape {x.shape}")
    return x2, single


class _Layer:
    kind = ""
    bias: np.ndarray | None

    def param_count(self) -> int:
        return sum(a.size for a in self.params.values())

    def buffers(self) -> dict[str, np.ndarray]:
        return {}

    def load_buffers(self, buffers: dict) -> None:
        pass

    def __call__(self, x):
        return self.forward(x)

    def _check_cache(self, dy):
        if self._cache is None:
            raise RuntimeError("backward called without a cached forward pass")
        dy = np.asarray(dy)
        single = dy.ndim == 1
        g = dy[None, :] if single else dy
        return g, single


class DenseLinearLayer(_Layer):
    kind = "dense"

    def __init__(self, weight, bias=None):
        self.weight = weight
        self.bias = bias
        self.grads = {}
        self._cache = None

    @classmethod
    def create(cls, in_features, out_features, rng=None, bias=True, dtype=np.float64):
        """U(-1/sqrt(in), 1/sqrt(in)) for weight and bias."""
        rng = rng if rng is not None else np.random.default_rng(0)
        bound = 1.0 / np.sqrt(in_features)
        w = rng.uniform(-bound, bound, size=(out_features, in_features)).astype(dtype)
        b = rng.uniform(-bound, bound, size=out_features).astype(dtype) if bias else None
        return cls(w, b)

    @property
    def in_features(self):
        return self.weight.shape[1]

    @property
    def out_features(self):
        return self.weight.shape[0]

    @property
    def params(self):
        p = {"weight": self.weight}
        if self.bias is not None:
            p["bias"] = self.bias
        return p

    def config(self):
        return {"kind": self.kind, "in": self.in_features, "out": self.out_features, "bias": self.bias is not None}

    def forward(self, x, counter: OpCounter | None = None, cache=True):
        x2, single = _batch(x, self.in_features)
        y = x2 @ self.weight.T
        if self.bias is not None:
            y = y + self.bias
        if counter is not None:
            counter.mults += x2.shape[0] * self.weight.size
            counter.adds += x2.shape[0] * self.weight.size
        self._cache = x2 if cache else None
        return y[0] if single else y

    def backward(self, dy):
        g, single = self._check_cache(dy)
        x2 = self._cache
        self.grads = {"weight": g.T @ x2}
        if self.bias is not None:
            self.grads["bias"] = g.sum(axis=0)
        dx = g @ self.weight
        return dx[0] if single else dx


def dense_param_count(in_features, out_features, bias=True):
    return in_features * out_features + (out_features if bias else 0)


class LowRankLayer(_Layer):
    """``y = U (V x) + bias`` with U: out x r, V: r x in."""

    kind = "lowrank"

    def __init__(self, u, v, bias=None):
        if u.shape[1] != v.shape[0]:
            raise ShapeError(f"rank mismatch between U {u.shape} and V {v.shape}")
        self.u = u
        self.v = v
        self.bias = bias
        self.grads = {}
        self._cache = None

    @classmethod
    def create(cls, in_features, out_features, rank, rng=None, bias=True, dtype=np.float64):
        """Each factor initialised like a dense layer of its own fan-in."""
        rng = rng if rng is not None else np.random.default_rng(0)
        v = rng.uniform(-1, 1, size=(rank, in_features)) / np.sqrt(in_features)
        u = rng.uniform(-1, 1, size=(out_features, rank)) / np.sqrt(max(rank, 1))
        b = np.zeros(out_features, dtype=dtype) if bias else None
        return cls(u.astype(dtype), v.astype(dtype), b)

    @property
    def rank(self):
        return self.v.shape[0]

    @property
    def params(self):
        p = {"u": self.u, "v": self.v}
        if self.bias is not None:
            p["bias"] = self.bias
        return p

    def config(self):
        return {
            "kind": self.kind,
            "in": self.v.shape[1],
            "out": self.u.shape[0],
            "rank": self.rank,
            "bias": self.bias is not None,
        }

    def forward(self, x, cache=True):
        x2, single = _batch(x, self.v.shape[1])
        vx = x2 @ self.v.T
        y = vx @ self.u.T
        if self.bias is not None:
            y = y + self.bias
        self._cache = (x2, vx) if cache else None
        return y[0] if single else y

    def backward(self, dy):
        g, single = self._check_cache(dy)
        x2, vx = self._cache
        ut_dy = g @ self.u
        self.grads = {"u": g.T @ vx, "v": ut_dy.T @ x2}
        if self.bias is not None:
            self.grads["bias"] = g.sum(axis=0)
        dx = ut_dy @ self.v
        return dx[0] if single else dx


def lowrank_param_count(in_features, out_features, rank, bias=True):
    return rank * (in_features + out_features) + (out_features if bias else 0)


def circulant_matrix(c) -> np.ndarray:
    """Explicit circulant with first column c: ``C[i, j] = c[(i - j) mod n]``."""
    c = np.asarray(c)
    n = len(c)
    idx = (np.arange(n)[:, None] - np.arange(n)[None, :]) % n
    return c[idx]


def _real_part(z):
    scale = max(1.0, float(np.max(np.abs(z.real))) if z.size else 1.0)
    residue = float(np.max(np.abs(z.imag))) if z.size else 0.0
    if residue > IMAG_TOL * scale:
        raise ArithmeticError(f"imaginary residue {residue:.3e} exceeds tolerance {IMAG_TOL * scale:.3e}")
    return z.real


def circular_convolve(c, x) -> np.ndarray:
    """``c (*) x`` along the last axis; FFT path for power-of-two lengths."""
    c = np.asarray(c, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if is_power_of_two(len(c)):
        return _real_part(ifft(fft(c) * fft(x)))
    return x @ circulant_matrix(c).T


def circular_correlate(a, x) -> np.ndarray:
    """``r[k] = sum_i a[i] x[(i - k) mod n]`` along the last axis."""
    a = np.asarray(a, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    n = a.shape[-1]
    if is_power_of_two(n):
        return _real_part(ifft(np.conj(fft(x)) * fft(a)))
    idx = (np.arange(n)[None, :] - np.arange(n)[:, None]) % n  # idx[k, i] = i - k
    return np.einsum("...i,...ki->...k", a, x[..., idx])


class CirculantLayer(_Layer):
    kind = "circulant"

    def __init__(self, c, bias=None):
        self.c = c
        self.bias = bias
        self.grads = {}
        self._cache = None

    @classmethod
    def create(cls, n, rng=None, bias=True, dtype=np.float64):
        """U(-1/sqrt(n), 1/sqrt(n)) shifted to zero mean.

        A nonzero sum of c adds the same multiple of the input mean to every
        output; on nonnegative inputs (pixels) that offset can switch every
        downstream ReLU off at initialisation.
        """
        rng = rng if rng is not None else np.random.default_rng(0)
        c = rng.uniform(-1, 1, size=n) / np.sqrt(n)
        c -= c.mean()
        return cls(c.astype(dtype), np.zeros(n, dtype=dtype) if bias else None)

    @property
    def n(self):
        return len(self.c)

    @property
    def params(self):
        p = {"c": self.c}
        if self.bias is not None:
            p["bias"] = self.bias
        return p

    def config(self):
        return {"kind": self.kind, "n": self.n, "bias": self.bias is not None}

    def forward(self, x, cache=True):
        x2, single = _batch(x, self.n)
        dtype = np.result_type(self.c, x2)
        if is_power_of_two(self.n):
            x_hat = fft(x2)
            y = _real_part(ifft(fft(self.c) * x_hat))
        else:
            x_hat = None
            y = circular_convolve(self.c, x2)
        y = y.astype(dtype)
        if self.bias is not None:
            y = y + self.bias
        self._cache = (x2, x_hat) if cache else None
        return y[0] if single else y

    def backward(self, dy):
        g, single = self._check_cache(dy)
        x2, x_hat = self._cache
        dtype = np.result_type(self.c, g)
        # dc[k] = sum_i dy[i] x[i-k];  dx[j] = sum_i dy[i] c[i-j]
        if x_hat is not None:
            g_hat = fft(g)
            dc = _real_part(ifft((np.conj(x_hat) * g_hat).sum(axis=0)))
            dx = _real_part(ifft(np.conj(fft(self.c)) * g_hat))
        else:
            dc = circular_correlate(g, x2).sum(axis=0)
            dx = circular_correlate(g, np.broadcast_to(self.c, g.shape))
        self.grads = {"c": dc.astype(dtype)}
        if self.bias is not None:
            self.grads["bias"] = g.sum(axis=0)
        dx = dx.astype(dtype)
        return dx[0] if single else dx


def circulant_param_count(n, bias=True):
    return n + (n if bias else 0)


def walsh_hadamard(x, counter: OpCounter | None = None) -> np.ndarray:
    """Unnormalized Walsh-Hadamard transform along the last axis (H @ H = n I)."""
    x = np.array(x, copy=True)
    n = x.shape[-1]
    if not is_power_of_two(n):
        raise ValueError(f"Walsh-Hadamard length must be a power of two, got {n}")
    lead = x.shape[:-1]
    h = 1
    while h < n:
        v = x.reshape(lead + (n // (2 * h), 2, h))
        a = v[..., 0, :].copy()
        b = v[..., 1, :]
        v[..., 0, :] += b
        np.subtract(a, b, out=v[..., 1, :])
        h *= 2
    if counter is not None:
        counter.adds += int(np.prod(lead, dtype=np.int64)) * n * log2_exact(n)
    return x


class FastfoodLayer(_Layer):
    """``y = (1/sqrt(n)) S H G P H B x + bias`` with learnable diagonals s, g, b."""

    kind = "fastfood"

    def __init__(self, s, g, b_diag, perm: Permutation, bias=None):
        n = len(s)
        if not is_power_of_two(n):
            raise ValueError(f"Fastfood size must be a power of two, got n={n}")
        if g.shape != (n,) or b_diag.shape != (n,) or perm.n != n:
            raise ShapeError("Fastfood diagonals and permutation must all have length n")
        self.s, self.g, self.b_diag, self.perm = s, g, b_diag, perm
        self.bias = bias
        self.grads = {}
        self._cache = None

    @classmethod
    def create(cls, n, rng=None, bias=True, dtype=np.float64):
        """Random +-1 binary diagonal, Gaussian g, s = 1/sqrt(n) so the map is norm-preserving on average."""
        rng = rng if rng is not None else np.random.default_rng(0)
        b_diag = rng.choice([-1.0, 1.0], size=n)
        g = rng.standard_normal(n)
        s = np.full(n, 1.0 / np.sqrt(n))
        perm = Permutation(rng.permutation(n))
        return cls(s.astype(dtype), g.astype(dtype), b_diag.astype(dtype), perm,
                   np.zeros(n, dtype=dtype) if bias else None)

    @property
    def n(self):
        return len(self.s)

    @property
    def params(self):
        p = {"s": self.s, "g": self.g, "b_diag": self.b_diag}
        if self.bias is not None:
            p["bias"] = self.bias
        return p

    def config(self):
        return {"kind": self.kind, "n": self.n, "bias": self.bias is not None}

    def buffers(self):
        return {"permutation": self.perm.map}

    def load_buffers(self, buffers):
        if "permutation" in buffers:
            self.perm = Permutation(buffers["permutation"])

    def forward(self, x, cache=True):
        x2, single = _batch(x, self.n)
        scale = 1.0 / np.sqrt(self.n)
        t2 = walsh_hadamard(self.b_diag * x2)
        t3 = self.perm.apply(t2)
        t5 = walsh_hadamard(self.g * t3)
        y = (scale * self.s) * t5
        if self.bias is not None:
            y = y + self.bias
        self._cache = (x2, t3, t5) if cache else None
        return y[0] if single else y

    def backward(self, dy):
        gr, single = self._check_cache(dy)
        x2, t3, t5 = self._cache
        scale = 1.0 / np.sqrt(self.n)
        grads = {"s": scale * (gr * t5).sum(axis=0)}
        d4 = walsh_hadamard(scale * self.s * gr)
        grads["g"] = (d4 * t3).sum(axis=0)
        d1 = walsh_hadamard(self.perm.apply_transpose(self.g * d4))
        grads["b_diag"] = (d1 * x2).sum(axis=0)
        if self.bias is not None:
            grads["bias"] = gr.sum(axis=0)
        self.grads = grads
        dx = self.b_diag * d1
        return dx[0] if single else dx


def fastfood_param_count(n, bias=True):
    return 3 * n + (n if bias else 0)
