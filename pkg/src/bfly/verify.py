"""Oracle suites run by ``bfly verify``.

Each suite compares a fast path with an independent reference and reports
the largest error it saw against a fixed tolerance.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .baselines import CirculantLayer, DenseLinearLayer, FastfoodLayer, LowRankLayer
from .butterfly import Init, bit_reversal_permutation, butterfly_apply, butterfly_new, dense_reconstruct, fft_configure
from .core import csr_from_dense, csr_spmm, csr_to_dense, make_rng, matmul, matvec, random_sparse, rel_error
from .gradcheck import check_layer_gradients
from .pixelfly import build_mask, pixelfly_new


@dataclass
class SuiteResult:
    name: str
    passed: bool
    max_error: float
    tolerance: float
    cases: int

    def line(self) -> str:
        verdict = "PASS" if self.passed else "FAIL"
        return f"{verdict} {self.name:<10} max_err={self.max_error:.3e} tol={self.tolerance:.0e} cases={self.cases}"


def naive_dft(x: np.ndarray, inverse: bool = False) -> np.ndarray:
    """O(n^2) DFT of each row, phases reduced mod n before the exponential."""
    n = x.shape[-1]
    k = np.arange(n)
    sign = 1.0 if inverse else -1.0
    w = np.exp(sign * 2j * np.pi * (np.outer(k, k) % n) / n)
    return matmul(np.atleast_2d(x), w.T).reshape(x.shape)


def brute_force_block_support(m: int) -> np.ndarray:
    """Union of the supports of all log2(m) butterfly factors on an m x m block grid,
    enumerated pair by pair."""
    support = np.zeros((m, m), dtype=bool)
    support[np.arange(m), np.arange(m)] = True
    s = 1
    while s < m:
        for p in range(m // 2):
            i = (p // s) * 2 * s + p % s
            j = i + s
            for a in (i, j):
                for b in (i, j):
                    support[a, b] = True
        s *= 2
    return support


def suite_butterfly(rng: np.random.Generator, count: int = 200) -> SuiteResult:
    worst = 0.0
    for t in range(count):
        n = 2 ** (1 + t % 10)
        init = (Init.GIVENS, Init.UNIFORM_SCALED)[t % 2]
        perm = bit_reversal_permutation(n) if t % 3 == 0 else None
        layer = butterfly_new(n, init, rng, permutation=perm)
        x = rng.standard_normal(n)
        worst = max(worst, rel_error(butterfly_apply(layer, x), matvec(dense_reconstruct(layer), x)))
    return SuiteResult("butterfly", worst <= 1e-12, worst, 1e-12, count)


def suite_fft(rng: np.random.Generator) -> SuiteResult:
    worst = 0.0
    cases = 0
    for p in range(1, 11):
        n = 2**p
        x = rng.standard_normal((3, n)) + 1j * rng.standard_normal((3, n))
        for inverse in (False, True):
            got = fft_configure(n, inverse).forward(x, cache=False)
            worst = max(worst, rel_error(got, naive_dft(x, inverse)))
            cases += 1
    return SuiteResult("fft", worst <= 1e-9, worst, 1e-9, cases)


def gradient_layers(n: int, rng: np.random.Generator) -> dict:
    """One float64 instance of every trainable layer type at size n, with
    non-zero biases so their gradients are exercised."""
    layers = {
        "butterfly": butterfly_new(n, Init.GIVENS, rng, permutation=bit_reversal_permutation(n), bias=True),
        "pixelfly": pixelfly_new(n, max(1, n // 8), 3, rng, bias=True),
        "dense": DenseLinearLayer.create(n, n, rng),
        "lowrank": LowRankLayer.create(n, n, 2, rng),
        "circulant": CirculantLayer.create(n, rng),
        "fastfood": FastfoodLayer.create(n, rng),
    }
    for layer in layers.values():
        if "bias" in layer.params:
            layer.params["bias"][...] = rng.standard_normal(n)
    return layers


def suite_gradients(rng: np.random.Generator, n: int = 16) -> SuiteResult:
    worst = 0.0
    cases = 0
    for layer in gradient_layers(n, rng).values():
        errs = check_layer_gradients(layer, rng.standard_normal((2, n)), rng)
        worst = max(worst, *errs.values())
        cases += len(errs)
    return SuiteResult("gradients", worst <= 1e-5, worst, 1e-5, cases)


def suite_mask(rng: np.random.Generator) -> SuiteResult:
    mismatches = 0
    cases = 0
    for p in range(0, 9):
        m = 2**p
        for b in (1, 2, 4):
            mask = build_mask(m * b, b)
            cases += 1
            if not np.array_equal(mask.block_pattern(), brute_force_block_support(m)):
                mismatches += 1
            if mask.nnz != b * b * m * (1 + p) or int(mask.scalar_pattern().sum()) != mask.nnz:
                mismatches += 1
    return SuiteResult("mask", mismatches == 0, float(mismatches), 0.0, cases)


def suite_csr(rng: np.random.Generator) -> SuiteResult:
    worst = 0.0
    cases = 0
    for rows, cols, sp in [(1, 1, 0.0), (7, 5, 0.5), (64, 64, 0.9), (128, 96, 0.99), (33, 200, 0.0)]:
        a = random_sparse(rows, cols, sp, rng)
        dense = csr_to_dense(a)
        back = csr_from_dense(dense)
        worst = max(worst, float(np.max(np.abs(csr_to_dense(back) - dense))))
        b = rng.standard_normal((cols, 9))
        worst = max(worst, float(np.max(np.abs(csr_spmm(a, b) - matmul(dense, b)))))
        cases += 1
    return SuiteResult("csr", worst <= 1e-12, worst, 1e-12, cases)


SUITES = {
    "butterfly": suite_butterfly,
    "fft": suite_fft,
    "gradients": suite_gradients,
    "mask": suite_mask,
    "csr": suite_csr,
}


def run_suites(names: list[str] | None = None, seed: int = 0) -> list[SuiteResult]:
    names = list(SUITES) if names is None else names
    for name in names:
        if name not in SUITES:
            raise KeyError(f"unknown suite {name!r}; valid suites: {', '.join(SUITES)}")
    return [SUITES[name](make_rng(seed)) for name in names]
