"""Dense and CSR primitives shared by every layer, oracle and benchmark.

Dense matrices and vectors are plain numpy arrays (row-major, float64 unless
a caller asks otherwise).  The reference kernels here accumulate in ascending
inner index so that results are bit-reproducible and bit-identical to a naive
scalar triple loop; they are the verification path, not the fast path.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DEFAULT_SEED = 0


class ShapeError(ValueError):
    """Operand shapes are incompatible."""


def make_rng(seed: int = DEFAULT_SEED) -> np.random.Generator:
    """Seeded PCG64 generator (numpy's default 64-bit bit generator).

    PCG64 output is fixed by numpy's stability policy for a given seed, so the
    same seed gives the same stream on every platform.
    """
    return np.random.Generator(np.random.PCG64(seed))


@dataclass
class OpCounter:
    """Scalar operation tally filled in by instrumented kernels."""

    mults: int = 0
    adds: int = 0

    @property
    def flops(self) -> int:
        return self.mults + self.adds

    def reset(self) -> None:
        self.mults = 0
        self.adds = 0


def _as_2d(a, name):
    a = np.asarray(a)
    if a.ndim != 2 or a.shape[0] < 1 or a.shape[1] < 1:
        raise ShapeError(f"{name} must be a non-empty 2-D array, got shape {a.shape}")
    return a


def matmul(a, b, counter: OpCounter | None = None) -> np.ndarray:
    """Reference product ``a @ b`` with ascending-k accumulation.

    Each output element is ``((0 + a[i,0]b[0,j]) + a[i,1]b[1,j]) + ...``, the
    same order a scalar triple loop uses, so the two agree bit for bit.
    """
    a = _as_2d(a, "a")
    b = _as_2d(b, "b")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shape mismatch: a is {a.shape}, b is {b.shape}")
    m, inner = a.shape
    n = b.shape[1]
    dtype = np.result_type(a, b)
    out = np.zeros((m, n), dtype=dtype)
    tmp = np.empty((m, n), dtype=dtype)
    for k in range(inner):
        np.multiply(a[:, k : k + 1], b[k], out=tmp)
        out += tmp
    if counter is not None:
        counter.mults += m * n * inner
        counter.adds += m * n * inner
    return out


def matvec(a, x, counter: OpCounter | None = None) -> np.ndarray:
    a = _as_2d(a, "a")
    x = np.asarray(x)
    if x.ndim != 1 or x.shape[0] != a.shape[1]:
        raise ShapeError(f"matvec shape mismatch: a is {a.shape}, x is {x.shape}")
    rows, inner = a.shape
    out = np.zeros(rows, dtype=np.result_type(a, x))
    for k in range(inner):
        out += a[:, k] * x[k]
    if counter is not None:
        counter.mults += rows * inner
        counter.adds += rows * inner
    return out


@dataclass(frozen=True)
class CsrMatrix:
    rows: int
    cols: int
    row_ptr: np.ndarray
    col_idx: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "row_ptr", np.asarray(self.row_ptr, dtype=np.int64))
        object.__setattr__(self, "col_idx", np.asarray(self.col_idx, dtype=np.int64))
        object.__setattr__(self, "values", np.asarray(self.values))
        if self.rows < 1 or self.cols < 1:
            raise ShapeError(f"CSR dimensions must be positive, got {self.rows}x{self.cols}")
        rp, ci = self.row_ptr, self.col_idx
        if rp.shape != (self.rows + 1,) or rp[0] != 0 or np.any(np.diff(rp) < 0):
            raise ValueError("row_ptr must start at 0, be non-decreasing and have rows+1 entries")
        if rp[-1] != len(ci) or len(ci) != len(self.values):
            raise ValueError("row_ptr[-1], len(col_idx) and len(values) must all equal nnz")
        if len(ci) and (ci.min() < 0 or ci.max() >= self.cols):
            raise ValueError("column index out of range")
        # strictly increasing columns within each row
        steps = np.diff(ci)
        row_starts = rp[1:-1]
        inside = np.ones(len(steps), dtype=bool)
        inside[row_starts[(row_starts > 0) & (row_starts < len(ci))] - 1] = False
        if np.any(steps[inside] <= 0):
            raise ValueError("column indices must be strictly increasing within a row")

    @property
    def nnz(self) -> int:
        return int(self.row_ptr[-1])

    @property
    def shape(self) -> tuple[int, int]:
        return (self.rows, self.cols)

    def row_of_entry(self) -> np.ndarray:
        return np.repeat(np.arange(self.rows), np.diff(self.row_ptr))

    def to_dense(self) -> np.ndarray:
        return csr_to_dense(self)


def csr_from_dense(a, zero_tol: float = 0.0) -> CsrMatrix:
    """Entries with ``|value| <= zero_tol`` are dropped."""
    if zero_tol < 0:
        raise ValueError(f"zero_tol must be >= 0, got {zero_tol}")
    a = _as_2d(a, "a")
    keep = np.abs(a) > zero_tol
    r, c = np.nonzero(keep)  # row-major order, columns ascending per row
    row_ptr = np.zeros(a.shape[0] + 1, dtype=np.int64)
    np.cumsum(np.bincount(r, minlength=a.shape[0]), out=row_ptr[1:])
    return CsrMatrix(a.shape[0], a.shape[1], row_ptr, c.astype(np.int64), a[r, c].copy())


def csr_to_dense(m: CsrMatrix) -> np.ndarray:
    out = np.zeros((m.rows, m.cols), dtype=m.values.dtype if m.nnz else np.float64)
    out[m.row_of_entry(), m.col_idx] = m.values
    return out


def csr_spmm(a: CsrMatrix, b) -> np.ndarray:
    """Sparse-times-dense product.

    Entries are consumed slot by slot (the t-th stored entry of every row at
    once), so each output element still accumulates in ascending column order.
    """
    b = _as_2d(b, "b")
    if a.cols != b.shape[0]:
        raise ShapeError(f"csr_spmm shape mismatch: a is {a.shape}, b is {b.shape}")
    out = np.zeros((a.rows, b.shape[1]), dtype=np.result_type(a.values, b))
    counts = np.diff(a.row_ptr)
    if a.nnz == 0:
        return out
    # rows sorted by descending count so slot t touches a prefix
    order = np.argsort(-counts, kind="stable")
    sorted_counts = counts[order]
    starts = a.row_ptr[:-1][order]
    for t in range(int(sorted_counts[0])):
        live = int(np.searchsorted(-sorted_counts, -t, side="left"))
        rows = order[:live]
        pos = starts[:live] + t
        out[rows] += a.values[pos, None] * b[a.col_idx[pos]]
    return out


def random_sparse(rows: int, cols: int, sparsity: float, rng: np.random.Generator) -> CsrMatrix:
    """Random CSR matrix with exactly ``round((1-sparsity)*rows*cols)`` entries.

    Positions are sampled without replacement; values are uniform in [-1, 1].
    """
    if not 0.0 <= sparsity < 1.0:
        raise ValueError(f"sparsity must lie in [0, 1), got {sparsity}")
    total = rows * cols
    nnz = int(round((1.0 - sparsity) * total))
    flat = np.sort(rng.choice(total, size=nnz, replace=False))
    r, c = np.divmod(flat, cols)
    row_ptr = np.zeros(rows + 1, dtype=np.int64)
    np.cumsum(np.bincount(r, minlength=rows), out=row_ptr[1:])
    values = rng.uniform(-1.0, 1.0, size=nnz)
    return CsrMatrix(rows, cols, row_ptr, c.astype(np.int64), values)


def is_power_of_two(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


def log2_exact(n: int) -> int:
    if not is_power_of_two(n):
        raise ValueError(f"{n} is not a power of two")
    return n.bit_length() - 1


def rel_error(actual, expected) -> float:
    """max |actual - expected| / max |expected| (absolute when expected is zero)."""
    actual = np.asarray(actual)
    expected = np.asarray(expected)
    diff = np.max(np.abs(actual - expected)) if actual.size else 0.0
    scale = np.max(np.abs(expected)) if expected.size else 0.0
    return float(diff / scale) if scale > 0 else float(diff)
