"""Token-wise cross-attention enhancement.

One scaled dot-product attention primitive, applied twice: once with the
support-branch embeddings as keys/values (spatial restoration) and once
with the video-encoder embeddings (temporal enhancement), then a fusion
layer over the sum.  Queries come from the selection stage, so the output
row count always equals the query row count.

Attention internals run in float64 (scores, softmax, weighted sum) and the
result is cast back to the query dtype; each output row is a convex
combination of value rows, which bounds every output coordinate by the
min/max of that coordinate over the values.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import DegenerateInputError, ShapeError
from .selection import LinearParams


@dataclass
class AttentionParams:
    """Optional Q/K/V projections (identity when absent) and the scale dim."""

    d_k: int | None = None
    q_proj: LinearParams | None = None
    k_proj: LinearParams | None = None
    v_proj: LinearParams | None = None


def _project(x: np.ndarray, proj: LinearParams | None) -> np.ndarray:
    if proj is None:
        return x
    return kernels.linear(x, proj.w, proj.b)


def token_wise_attention(
    q: np.ndarray, k: np.ndarray, v: np.ndarray, params: AttentionParams | None = None
) -> np.ndarray:
    """softmax(q k^T / sqrt(d_k)) v with one output row per query row."""
    params = params or AttentionParams()
    q = _project(np.asarray(q), params.q_proj)
    k = _project(np.asarray(k), params.k_proj)
    v = _project(np.asarray(v), params.v_proj)
    if k.shape[0] != v.shape[0]:
        raise ShapeError(f"key/value row counts differ: {k.shape[0]} vs {v.shape[0]}")
    if k.shape[0] == 0:
        raise DegenerateInputError("attention requires at least one key/value row")
    if q.shape[1] != k.shape[1]:
        raise ShapeError(f"query/key dims differ: {q.shape} vs {k.shape}")
    d_k = params.d_k if params.d_k is not None else k.shape[1]
    if d_k < 1:
        raise ShapeError(f"d_k must be >= 1, got {d_k}")
    out_dtype = q.dtype
    q64 = np.ascontiguousarray(q, dtype=np.float64)
    k64 = np.ascontiguousarray(k, dtype=np.float64)
    v64 = np.ascontiguousarray(v, dtype=np.float64)
    scores = kernels.matmul(q64, np.ascontiguousarray(k64.T)) / math.sqrt(d_k)
    weights = kernels.softmax_rows(scores, 1.0)
    return kernels.matmul(weights, v64).astype(out_dtype)


def spatial_restoration(
    q_tokens: np.ndarray, e_spatial: np.ndarray, params: AttentionParams | None = None
) -> np.ndarray:
    """Cross-attend queries into the support-branch context (K = V = support)."""
    return token_wise_attention(q_tokens, e_spatial, e_spatial, params)


def temporal_enhancement(
    q_tokens: np.ndarray, e_temporal: np.ndarray, params: AttentionParams | None = None
) -> np.ndarray:
    """Cross-attend queries into the video-encoder context (K = V = temporal)."""
    return token_wise_attention(q_tokens, e_temporal, e_temporal, params)


def fuse(
    spatial: np.ndarray,
    temporal: np.ndarray | None = None,
    fusion_mlp: LinearParams | None = None,
    residual: bool = False,
) -> np.ndarray:
    """Fusion layer over spatial + temporal; a missing temporal branch
    contributes a zero tensor and an unconfigured layer is the identity."""
    if temporal is not None:
        if temporal.shape != spatial.shape:
            raise ShapeError(f"branch shapes differ: {spatial.shape} vs {temporal.shape}")
        combined = spatial + temporal
    else:
        combined = spatial
    if fusion_mlp is None:
        out = combined.copy()
    else:
        out = kernels.linear(combined, fusion_mlp.w, fusion_mlp.b)
    if residual:
        out = out + combined
    return out
