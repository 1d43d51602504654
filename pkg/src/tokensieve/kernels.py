"""Deterministic dense linear-algebra kernels.

Every exported operation pins its arithmetic recipe, not just its math:
reductions accumulate row-major, left to right, so results are bit-identical
across runs and equal to a naive loop implementation of the same recipe.
That property is what the selection oracle and the determinism guarantees
are built on, so it takes priority over raw throughput.  The kernels are
JIT-compiled single-threaded loops; no BLAS call is allowed to reorder a sum.

Recipes (normative):

* ``matmul``: ``out[i,j] = sum_k a[i,k]*b[k,j]`` accumulated in increasing
  ``k``, in the operand dtype.
* ``linear``: the ``matmul`` recipe, then one ``+ bias[j]`` per element.
* ``softmax_rows``: per row in float64: ``m = max(x)`` (scan), then
  ``e = exp((x - m)/tau)`` (libm exp), ``s = sum(e)`` left to right,
  ``p = e/s``; result cast back to the input dtype.
* ``cosine_sim``: in float64: row norms ``sqrt(sum(x*x))`` left to right,
  ``out[i,j] = dot(a_i, b_j) / (na_i * nb_j)`` with the dot accumulated left
  to right, clamped into [-1, 1]; cast back to the input dtype.
* ``row_sums``: float64 left-to-right sum over the feature axis.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

from .errors import DegenerateInputError, ParameterError, ShapeError

NORM_EPS = 1e-12  # below this a row counts as zero: upstream encoder failure


def _as_matrix(x, name: str) -> np.ndarray:
    x = np.asarray(x)
    if x.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {x.shape}")
    if x.dtype not in (np.float32, np.float64):
        raise ShapeError(f"{name} must be float32 or float64, got {x.dtype}")
    if not np.isfinite(x).all():
        raise DegenerateInputError(f"{name} contains non-finite entries")
    return np.ascontiguousarray(x)


@njit(cache=True)
def _mm(a, b):
    m, k = a.shape
    n = b.shape[1]
    out = np.zeros((m, n), dtype=a.dtype)
    for i in range(m):
        for p in range(k):
            aip = a[i, p]
            for j in range(n):
                out[i, j] += aip * b[p, j]
    return out


@njit(cache=True)
def _row_norms(a):
    m, d = a.shape
    out = np.empty(m, dtype=np.float64)
    for i in range(m):
        acc = 0.0
        for j in range(d):
            acc += a[i, j] * a[i, j]
        out[i] = math.sqrt(acc)
    return out


@njit(cache=True)
def _cosine(a, b, na, nb):
    m = a.shape[0]
    n = b.shape[0]
    d = a.shape[1]
    out = np.empty((m, n), dtype=np.float64)
    for i in range(m):
        for j in range(n):
            acc = 0.0
            for p in range(d):
                acc += a[i, p] * b[j, p]
            v = acc / (na[i] * nb[j])
            if v > 1.0:
                v = 1.0
            elif v < -1.0:
                v = -1.0
            out[i, j] = v
    return out


@njit(cache=True)
def _softmax_rows(x, tau):
    m, n = x.shape
    out = np.empty((m, n), dtype=np.float64)
    for i in range(m):
        hi = x[i, 0]
        for j in range(1, n):
            if x[i, j] > hi:
                hi = x[i, j]
        s = 0.0
        for j in range(n):
            e = math.exp((x[i, j] - hi) / tau)
            out[i, j] = e
            s += e
        for j in range(n):
            out[i, j] /= s
    return out


@njit(cache=True)
def _row_sums(x):
    m, n = x.shape
    out = np.empty(m, dtype=np.float64)
    for i in range(m):
        acc = 0.0
        for j in range(n):
            acc += x[i, j]
        out[i] = acc
    return out


def matmul(a, b) -> np.ndarray:
    """Matrix product with pinned left-to-right accumulation over the inner axis."""
    a = _as_matrix(a, "a")
    b = _as_matrix(b, "b")
    if a.dtype != b.dtype:
        raise ShapeError(f"operand dtypes differ: {a.dtype} vs {b.dtype}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"inner dimensions differ: {a.shape} x {b.shape}")
    return _mm(a, b)


def linear(x, w, bias) -> np.ndarray:
    """``x @ w + bias`` with bias broadcast over rows."""
    x = _as_matrix(x, "x")
    w = _as_matrix(w, "w")
    bias = _as_matrix(bias, "bias")
    if x.dtype != w.dtype or x.dtype != bias.dtype:
        raise ShapeError("x, w and bias must share a dtype")
    if x.shape[1] != w.shape[0]:
        raise ShapeError(f"inner dimensions differ: {x.shape} x {w.shape}")
    if bias.shape != (1, w.shape[1]):
        raise ShapeError(f"bias must be 1x{w.shape[1]}, got {bias.shape}")
    return _mm(x, w) + bias


def softmax_rows(x, tau: float) -> np.ndarray:
    """Temperature softmax over each row; rows sum to 1 within 1e-6."""
    x = _as_matrix(x, "x")
    if not tau > 0:
        raise ParameterError(f"tau must be > 0, got {tau}")
    out = _softmax_rows(x.astype(np.float64), float(tau))
    return out.astype(x.dtype)


def cosine_sim(a, b) -> np.ndarray:
    """Pairwise cosine similarity between rows of ``a`` and rows of ``b``."""
    a = _as_matrix(a, "a")
    b = _as_matrix(b, "b")
    if a.dtype != b.dtype:
        raise ShapeError(f"operand dtypes differ: {a.dtype} vs {b.dtype}")
    if a.shape[1] != b.shape[1]:
        raise ShapeError(f"feature dims differ: {a.shape} vs {b.shape}")
    a64 = a.astype(np.float64)
    b64 = b.astype(np.float64)
    na = _row_norms(a64)
    nb = _row_norms(b64)
    for name, norms in (("a", na), ("b", nb)):
        bad = np.nonzero(norms <= NORM_EPS)[0]
        if bad.size:
            raise DegenerateInputError(f"row {bad[0]} of {name} has norm <= {NORM_EPS}")
    return _cosine(a64, b64, na, nb).astype(a.dtype)


def row_sums(x) -> np.ndarray:
    """Left-to-right sum over each row, always in float64."""
    x = _as_matrix(x, "x")
    return _row_sums(x.astype(np.float64))


def topk_indices(scores, k: int) -> np.ndarray:
    """Indices of the k largest scores, ties to the lower index, returned ascending."""
    scores = np.asarray(scores, dtype=np.float64).ravel()
    if not np.isfinite(scores).all():
        raise DegenerateInputError("scores contain non-finite entries")
    m = scores.size
    if k < 1 or k > m:
        raise ParameterError(f"k must be in [1, {m}], got {k}")
    order = np.argsort(-scores, kind="stable")[:k]
    return np.sort(order)
