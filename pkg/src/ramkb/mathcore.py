"""Dense float64 kernels used by every other module.

All functions are pure and operate on (or return) plain numpy arrays.
"""

from __future__ import annotations

from typing import Iterable, Sequence

import numpy as np

from .errors import DimensionError


def make_rng(*keys: int) -> np.random.Generator:
    """Deterministic generator keyed by a tuple of non-negative integers.

    The same key tuple always yields the same stream, and distinct tuples
    yield statistically independent streams, so per-epoch / per-fact
    generators can be derived without threading a single stateful RNG
    through the whole program.
    """
    for k in keys:
        if k < 0:
            raise ValueError(f"rng keys must be non-negative, got {keys}")
    return np.random.default_rng(np.random.SeedSequence(list(keys)))


def softmax(v: np.ndarray) -> np.ndarray:
    """Stable softmax of a vector (max-subtracted before exponentiation)."""
    v = np.asarray(v, dtype=np.float64)
    shifted = v - v.max()
    e = np.exp(shifted)
    return e / e.sum()


def softmax_last_axis(x: np.ndarray) -> np.ndarray:
    """Stable softmax along the last axis of an arbitrary-rank array."""
    x = np.asarray(x, dtype=np.float64)
    shifted = x - x.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_matrix(m: np.ndarray) -> np.ndarray:
    """Softmax over all entries of a matrix jointly.

    The whole matrix is normalized as one distribution, not row by row:
    the output entries are positive and sum to 1 across the entire matrix.
    """
    m = np.asarray(m, dtype=np.float64)
    flat = softmax(m.reshape(-1))
    return flat.reshape(m.shape)


def softmax_vjp(s: np.ndarray, grad: np.ndarray) -> np.ndarray:
    """Pull an output-side gradient back through softmax.

    `s` is the softmax output. The Jacobian is diag(s) - s s^T, which is
    symmetric, so the vector-Jacobian product is s * (grad - <s, grad>).
    Works along the last axis for batched inputs.
    """
    inner = (s * grad).sum(axis=-1, keepdims=True)
    return s * (grad - inner)


def softmax_matrix_vjp(q: np.ndarray, grad: np.ndarray) -> np.ndarray:
    """Gradient pullback for :func:`softmax_matrix` (jointly normalized)."""
    inner = (q * grad).sum()
    return q * (grad - inner)


def multilinear(vectors: Sequence[np.ndarray] | Iterable[np.ndarray]) -> float:
    """Sum of coordinate-wise products of equally sized vectors.

    For vectors a_1 .. a_n this is sum_t a_1[t] * a_2[t] * ... * a_n[t].
    """
    vecs = [np.asarray(v, dtype=np.float64) for v in vectors]
    if not vecs:
        raise DimensionError("multilinear needs at least one vector")
    d = vecs[0].shape
    if len(d) != 1 or d[0] < 1:
        raise DimensionError(f"expected 1-d vectors, got shape {d}")
    for v in vecs[1:]:
        if v.shape != d:
            raise DimensionError(f"vector shapes differ: {d} vs {v.shape}")
    out = vecs[0].copy()
    for v in vecs[1:]:
        out *= v
    return float(out.sum())


def row_weighted_contract(weights: np.ndarray, matrix: np.ndarray) -> np.ndarray:
    """Weighted sum of matrix rows: out[j] = sum_k weights[k] * matrix[k, j]."""
    weights = np.asarray(weights, dtype=np.float64)
    matrix = np.asarray(matrix, dtype=np.float64)
    if weights.ndim != 1 or matrix.ndim != 2:
        raise DimensionError(
            f"expected vector and matrix, got shapes {weights.shape}, {matrix.shape}"
        )
    if weights.shape[0] != matrix.shape[0]:
        raise DimensionError(
            f"weight length {weights.shape[0]} != row count {matrix.shape[0]}"
        )
    return weights @ matrix
