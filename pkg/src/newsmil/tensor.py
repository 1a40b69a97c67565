"""Dense float64 numerics shared by every layer of the model.

Matrices are 2-d numpy float64 arrays in row-major order, vectors are 1-d
arrays.  All randomness flows through an explicitly seeded PCG64 generator
so that every stochastic result in the package is reproducible from a
single integer seed.  Everything here is pure: the same inputs (and the
same generator state) give bit-identical outputs.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from .errors import DimensionError, NumericError

DTYPE = np.float64


def make_rng(seed: int) -> np.random.Generator:
    """Seeded PCG64 generator; identical seeds yield identical draws."""
    return np.random.Generator(np.random.PCG64(seed))


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product with an explicit shape check."""
    a = np.asarray(a, dtype=DTYPE)
    b = np.asarray(b, dtype=DTYPE)
    if a.ndim != 2 or b.ndim != 2:
        raise DimensionError(f"matmul expects 2-d operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    return a @ b


def sigmoid(x):
    """Elementwise 1/(1+exp(-x)) without overflow for any finite input,
    computed as 0.5*(1+tanh(x/2)): tanh saturates cleanly at both ends."""
    arr = np.asarray(x, dtype=DTYPE)
    out = 0.5 * (1.0 + np.tanh(0.5 * arr))
    return float(out) if arr.ndim == 0 else out


def tanh(x):
    arr = np.asarray(x, dtype=DTYPE)
    out = np.tanh(arr)
    return float(out) if arr.ndim == 0 else out


def softmax(x) -> np.ndarray:
    """Softmax of a nonempty 1-d vector, computed with max-subtraction."""
    v = np.asarray(x, dtype=DTYPE)
    if v.ndim != 1 or v.size == 0:
        raise ValueError(f"softmax expects a nonempty 1-d vector, got shape {v.shape}")
    e = np.exp(v - v.max())
    return e / e.sum()


def dropout_mask(shape, keep_prob: float, rng: np.random.Generator) -> np.ndarray:
    """Inverted-dropout mask: each element is 1/keep_prob with probability
    keep_prob, else 0, so the mask has expectation 1 per element."""
    if not 0.0 < keep_prob <= 1.0:
        raise ValueError(f"keep_prob must be in (0, 1], got {keep_prob}")
    keep = rng.random(shape) < keep_prob
    return keep.astype(DTYPE) / keep_prob


def finite_diff_grad(f: Callable[[np.ndarray], float], x, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of a scalar function, one coordinate at
    a time.  The input array is never modified; each evaluation sees a
    fresh copy with a single perturbed coordinate."""
    if h <= 0:
        raise ValueError(f"step size must be positive, got {h}")
    x = np.asarray(x, dtype=DTYPE)
    grad = np.zeros_like(x)
    work = x.copy()
    for i in range(x.size):
        orig = work.flat[i]
        work.flat[i] = orig + h
        fp = f(work)
        work.flat[i] = orig - h
        fm = f(work)
        work.flat[i] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NumericError(f"non-finite evaluation at coordinate {i}: f+={fp}, f-={fm}")
        grad.flat[i] = (fp - fm) / (2.0 * h)
    return grad
