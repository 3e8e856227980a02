"""Central finite-difference gradient checks for any layer.

A layer exposes ``params`` (name -> array, mutated in place), ``forward`` and
``backward``; the scalar probed is ``L = sum(dy * layer(x))``.
"""

from __future__ import annotations

import numpy as np


def _probe(layer, x, dy) -> float:
    return float(np.sum(dy * layer.forward(x, cache=False)))


def relative_gap(numeric: np.ndarray, analytic: np.ndarray) -> float:
    if numeric.size == 0:
        return 0.0
    scale = max(float(np.max(np.abs(numeric))), float(np.max(np.abs(analytic))), 1e-300)
    return float(np.max(np.abs(numeric - analytic))) / scale


def numeric_gradient(fn, arr: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    """Central differences of ``fn()`` with respect to every entry of ``arr``."""
    grad = np.zeros_like(arr, dtype=np.float64)
    flat = arr.reshape(-1)
    out = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        hi = fn()
        flat[i] = orig - eps
        lo = fn()
        flat[i] = orig
        out[i] = (hi - lo) / (2 * eps)
    return grad


def check_layer_gradients(layer, x: np.ndarray, rng: np.random.Generator, eps: float = 1e-6) -> dict[str, float]:
    """Relative gap between analytic and numeric gradients, per parameter and ``"input"``."""
    x = np.array(x, dtype=np.float64)
    y = layer.forward(x)
    dy = rng.standard_normal(y.shape)
    dx = layer.backward(dy)
    analytic = {name: np.array(g) for name, g in layer.grads.items()}
    errors = {}
    for name, arr in layer.params.items():
        errors[name] = relative_gap(numeric_gradient(lambda: _probe(layer, x, dy), arr, eps), analytic[name])
    errors["input"] = relative_gap(numeric_gradient(lambda: _probe(layer, x, dy), x, eps), dx)
    return errors
