"""Small numeric helpers shared by every module.

Tensors are plain ``numpy.ndarray`` objects in float64. Random streams come
from numpy's Philox counter-based bit generator, so a seed fixes the stream
independently of platform and call history elsewhere in the process.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

Rng = np.random.Generator


class ShapeError(ValueError):
    pass


class NumericError(ArithmeticError):
    pass


def make_rng(seed: int, stream: int = 0) -> Rng:
    """Deterministic generator for ``seed`` (Philox4x64, 10 rounds).

    ``stream`` fills the high key word, so different streams of one seed are
    independent.
    """
    if not (0 <= seed < 2**64 and 0 <= stream < 2**64):
        raise ValueError(f"seed and stream must fit in 64 unsigned bits, got {seed}, {stream}")
    return np.random.Generator(np.random.Philox(key=seed | (stream << 64)))


def as_tensor(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64)


_OPS = {
    "add": np.add,
    "sub": np.subtract,
    "mul": np.multiply,
}


def elementwise(op: str, a, b) -> np.ndarray:
    a = as_tensor(a)
    b = as_tensor(b)
    if op not in _OPS:
        raise ValueError(f"unknown op {op!r}; expected one of {sorted(_OPS)}")
    if a.shape != b.shape:
        raise ShapeError(f"{op}: dims {list(a.shape)} != {list(b.shape)}")
    return _OPS[op](a, b)


def finite_diff_grad(f: Callable[[np.ndarray], float], x, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of scalar ``f`` at ``x``.

    Each coordinate is perturbed by ``+h`` and ``-h`` in turn; ``x`` itself is
    left untouched.
    """
    if not h > 0:
        raise ValueError(f"step size must be positive, got {h}")
    x = np.array(x, dtype=np.float64, copy=True)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = float(f(x))
        flat[i] = orig - h
        fm = float(f(x))
        flat[i] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NumericError(f"non-finite function value while perturbing coordinate {i}")
        gflat[i] = (fp - fm) / (2.0 * h)
    return grad


def relative_error(a, b, floor: float = 1e-8) -> float:
    """Max elementwise ``|a-b| / max(|a|, |b|, floor)``."""
    a = as_tensor(a)
    b = as_tensor(b)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    if a.size == 0:
        return 0.0
    return float(np.max(np.abs(a - b) / denom))
