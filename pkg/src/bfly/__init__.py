"""Butterfly and pixelated-butterfly linear layers with numpy reference kernels,
structured baselines, a single-hidden-layer training harness and benchmarks."""

from .butterfly import (
    ButterflyLayer,
    Init,
    Permutation,
    bit_reversal_permutation,
    butterfly_apply,
    butterfly_backward,
    butterfly_new,
    dense_reconstruct,
    fft_configure,
)
from .core import CsrMatrix, OpCounter, csr_spmm, make_rng, matmul, matvec
from .pixelfly import PixelflyLayer, build_mask, pixelfly_apply, pixelfly_backward, pixelfly_new

__version__ = "0.1.0"
