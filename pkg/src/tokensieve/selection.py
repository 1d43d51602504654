"""Query-aware token selection.

The chain: align image tokens with a linear layer, score them against the
query by cosine similarity, normalize the similarity matrix with a
temperature softmax, fold it into one relevance scalar per image token,
blend that with a query-independent salience scalar, keep the top-k rows,
and compress consecutive groups with a linear aggregation layer.

Two readings of the similarity normalization exist and both are
implemented.  The default (``axis="image"``) applies the softmax over the
image-token axis independently per text token, so each text token
distributes one unit of attention mass across image tokens and the
relevance score of token i is the mass it attracts.  The literal
(``axis="text"``) reading normalizes each image token's row, which makes
every row sum to 1 and the summed score constant across tokens; it is kept
only for comparison.

Score vectors (relevance, salience, selection map) are always float64
regardless of the embedding dtype; embeddings keep their dtype end to end.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import ContractError, ParameterError, ShapeError


@dataclass
class LinearParams:
    """Weights of one linear layer, bias stored as a 1 x q row."""

    w: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        self.w = np.asarray(self.w)
        self.b = np.asarray(self.b)
        if self.w.ndim != 2 or self.b.shape != (1, self.w.shape[1]):
            raise ShapeError(
                f"linear params malformed: w {self.w.shape}, b {self.b.shape}"
            )

    @classmethod
    def identity(cls, d: int, dtype=np.float32) -> "LinearParams":
        return cls(np.eye(d, dtype=dtype), np.zeros((1, d), dtype=dtype))

    @classmethod
    def averaging(cls, c: int, d: int, dtype=np.float32) -> "LinearParams":
        """(c*d -> d) projection whose output is the mean of the c stacked rows."""
        dtype = np.dtype(dtype)
        w = np.tile(np.eye(d, dtype=dtype) / dtype.type(c), (c, 1))
        return cls(w, np.zeros((1, d), dtype=dtype))

    @classmethod
    def seeded(cls, p: int, q: int, seed: int, scale: float = 0.05, dtype=np.float32) -> "LinearParams":
        rng = np.random.default_rng(seed)
        w = scale * rng.standard_normal((p, q))
        if p == q:
            w += np.eye(q)
        return cls(w.astype(dtype), np.zeros((1, q), dtype=dtype))


@dataclass
class SelectionParams:
    tau: float = 0.07
    alpha: float = 0.0
    select_ratio: float = 2.0
    compress_ratio: int = 1
    align_mlp: LinearParams | None = None
    agg_mlp: LinearParams | None = None
    axis: str = "image"

    def __post_init__(self):
        if not self.tau > 0:
            raise ParameterError(f"tau must be > 0, got {self.tau}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ParameterError(f"alpha must be in [0, 1], got {self.alpha}")
        if self.select_ratio < 1:
            raise ParameterError(f"select_ratio must be >= 1, got {self.select_ratio}")
        if self.compress_ratio < 1:
            raise ParameterError(f"compress_ratio must be >= 1, got {self.compress_ratio}")
        if self.axis not in ("image", "text"):
            raise ParameterError(f"axis must be 'image' or 'text', got {self.axis}")


@dataclass
class SelectionResult:
    selected_indices: np.ndarray
    selection_map: np.ndarray
    s_sum: np.ndarray
    w: np.ndarray
    compressed: np.ndarray


def align(i: np.ndarray, params: SelectionParams) -> np.ndarray:
    """Aligned image tokens; an unconfigured alignment layer is a pass-through."""
    if params.align_mlp is None:
        return i
    return kernels.linear(i, params.align_mlp.w, params.align_mlp.b)


def normalize_similarity(s: np.ndarray, tau: float, axis: str = "image") -> np.ndarray:
    """Temperature softmax over the chosen axis of an image x text similarity
    matrix; float64 output.  Image-axis columns each sum to 1."""
    if axis == "image":
        return np.ascontiguousarray(
            kernels.softmax_rows(np.asarray(s, dtype=np.float64).T, tau).T
        )
    if axis == "text":
        return kernels.softmax_rows(np.asarray(s, dtype=np.float64), tau)
    raise ParameterError(f"axis must be 'image' or 'text', got {axis}")


def relevance_scores(p: np.ndarray) -> np.ndarray:
    """Total attention mass each image token receives across text tokens."""
    return kernels.row_sums(p)


def token_weights(i_aligned: np.ndarray) -> np.ndarray:
    """Query-independent salience: the coordinate sum of each aligned token."""
    return kernels.row_sums(i_aligned)


def _minmax(v: np.ndarray) -> np.ndarray:
    lo, hi = v.min(), v.max()
    if hi > lo:
        return (v - lo) / (hi - lo)
    return np.zeros_like(v)


def selection_map(s_sum: np.ndarray, w: np.ndarray, alpha: float) -> np.ndarray:
    """Blend of min-max-normalized relevance and salience; constant inputs
    normalize to zeros so the blend stays well-defined."""
    if not 0.0 <= alpha <= 1.0:
        raise ParameterError(f"alpha must be in [0, 1], got {alpha}")
    s_sum = np.asarray(s_sum, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    if s_sum.shape != w.shape:
        raise ShapeError(f"score lengths differ: {s_sum.shape} vs {w.shape}")
    return (1.0 - alpha) * _minmax(s_sum) + alpha * _minmax(w)


def select(i_aligned: np.ndarray, m_map: np.ndarray, k: int):
    """Rows of the aligned tokens at the top-k map scores, raster order kept."""
    idx = kernels.topk_indices(m_map, k)
    return np.ascontiguousarray(i_aligned[idx]), idx


def compress(t_topk: np.ndarray, c: int, agg_mlp: LinearParams | None = None) -> np.ndarray:
    """Concatenate consecutive groups of c rows and project (c*d -> d).

    The unconfigured aggregation layer is the averaging projection, i.e.
    each output row is the mean of its group.
    """
    k, d = t_topk.shape
    if c < 1:
        raise ParameterError(f"compress ratio must be >= 1, got {c}")
    if k % c:
        raise ContractError(f"selected count {k} not divisible by compress ratio {c}")
    if agg_mlp is None:
        agg_mlp = LinearParams.averaging(c, d, dtype=t_topk.dtype)
    if agg_mlp.w.shape != (c * d, d):
        raise ShapeError(f"aggregation weights must be {(c * d, d)}, got {agg_mlp.w.shape}")
    groups = np.ascontiguousarray(t_topk.reshape(k // c, c * d))
    return kernels.linear(groups, agg_mlp.w, agg_mlp.b)


def run_selection(
    i_raw: np.ndarray, t_text: np.ndarray, params: SelectionParams, k: int
) -> SelectionResult:
    """The full align -> similarity -> normalize -> score -> select -> compress chain."""
    i_al = align(i_raw, params)
    s = kernels.cosine_sim(i_al, t_text)
    p = normalize_similarity(s, params.tau, params.axis)
    s_sum = relevance_scores(p)
    w = token_weights(i_al)
    m_map = selection_map(s_sum, w, params.alpha)
    t_topk, idx = select(i_al, m_map, k)
    compressed = compress(t_topk, params.compress_ratio, params.agg_mlp)
    return SelectionResult(idx, m_map, s_sum, w, compressed)


def oracle_select(
    i_raw: np.ndarray, t_text: np.ndarray, params: SelectionParams, k: int
) -> list[int]:
    """Independent naive re-implementation of the selection chain; test reference.

    Recomputes every stage with plain Python loops, ``math.exp`` and a full
    sort, following the documented arithmetic recipes (left-to-right sums,
    float64 score math, cosine cast back to the embedding dtype).
    """
    dt = i_raw.dtype.type
    m, d = i_raw.shape
    n = t_text.shape[0]

    if params.align_mlp is None:
        i_al = [[dt(i_raw[i, j]) for j in range(d)] for i in range(m)]
    else:
        w, b = params.align_mlp.w, params.align_mlp.b
        i_al = []
        for i in range(m):
            row = []
            for j in range(d):
                acc = dt(0.0)
                for p_ in range(d):
                    acc = dt(acc + dt(i_raw[i, p_] * w[p_, j]))
                row.append(dt(acc + b[0, j]))
            i_al.append(row)

    def norm(row):
        acc = 0.0
        for v in row:
            acc += float(v) * float(v)
        return math.sqrt(acc)

    na = [norm(i_al[i]) for i in range(m)]
    nb = [norm([float(t_text[j, p_]) for p_ in range(d)]) for j in range(n)]
    sim = []
    for i in range(m):
        row = []
        for j in range(n):
            acc = 0.0
            for p_ in range(d):
                acc += float(i_al[i][p_]) * float(t_text[j, p_])
            v = acc / (na[i] * nb[j])
            v = min(1.0, max(-1.0, v))
            row.append(float(dt(v)))
        sim.append(row)

    p_mat = [[0.0] * n for _ in range(m)]
    if params.axis == "image":
        for j in range(n):
            hi = sim[0][j]
            for i in range(1, m):
                if sim[i][j] > hi:
                    hi = sim[i][j]
            tot = 0.0
            col = []
            for i in range(m):
                e = math.exp((sim[i][j] - hi) / params.tau)
                col.append(e)
                tot += e
            for i in range(m):
                p_mat[i][j] = col[i] / tot
    else:
        for i in range(m):
            hi = max(sim[i])
            tot = 0.0
            row = []
            for j in range(n):
                e = math.exp((sim[i][j] - hi) / params.tau)
                row.append(e)
                tot += e
            for j in range(n):
                p_mat[i][j] = row[j] / tot

    s_sum = []
    for i in range(m):
        acc = 0.0
        for j in range(n):
            acc += p_mat[i][j]
        s_sum.append(acc)
    w_scores = []
    for i in range(m):
        acc = 0.0
        for j in range(d):
            acc += float(i_al[i][j])
        w_scores.append(acc)

    def minmax(vals):
        lo, hi = min(vals), max(vals)
        if hi > lo:
            return [(v - lo) / (hi - lo) for v in vals]
        return [0.0] * len(vals)

    sn, wn = minmax(s_sum), minmax(w_scores)
    m_map = [(1.0 - params.alpha) * sn[i] + params.alpha * wn[i] for i in range(m)]
    ranked = sorted(range(m), key=lambda i: (-m_map[i], i))
    return sorted(ranked[:k])
