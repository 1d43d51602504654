"""Deterministic seeded mock encoders.

Stand-ins for the four encoder roles (text, per-patch image main branch,
downsampled image support branch, video) that plant known concepts into
known cells so selection quality is measurable.  All randomness comes from
one bit-exact, language-neutral hash scheme, pinned here because it is a
wire-level contract (golden files depend on it):

* ``splitmix64(x)``: ``x += 0x9E3779B97F4A7C15``; ``x ^= x >> 30``;
  ``x *= 0xBF58476D1CE4E5B9``; ``x ^= x >> 27``; ``x *= 0x94D049BB133111EB``;
  ``x ^= x >> 31`` (all mod 2**64).
* raw entry j of concept c: ``x = splitmix64(seed ^ (c * 0x9E3779B97F4A7C15)
  ^ (j * 0xBF58476D1CE4E5B9))``, then ``u = (x >> 11) / 2**53`` and the entry
  is ``2*u - 1`` in [-1, 1).  Both steps are exact in float64.
* a concept row is the raw d-vector L2-normalized in float64 (left-to-right
  sum of squares), then cast to the requested dtype.

Derived ids for background/noise/frame directions chain fields through
``h = splitmix64(h ^ field)`` starting from a role tag, so distinct roles
can never collide by construction of the tags.

Main-branch tokens are a 0.8/0.2 blend of their concept row and a per-token
noise row, renormalized, so planted concepts dominate their patch without
being byte-identical across tokens.
"""

from __future__ import annotations

import numpy as np
from numba import njit

from . import kernels
from .errors import DegenerateInputError, ParameterError
from .scene import SceneSpec, TokenBatch

U64 = np.uint64

# role tags for derived ids (arbitrary odd 64-bit constants, fixed forever)
TAG_BACKGROUND = 0xB5297A4D1C8E6F3B
TAG_POSITION_NOISE = 0x68E31DA4A1B54D8D
TAG_SUPPORT_NOISE = 0x1B56C4E9D6A3F20F
TAG_VIEW_BACKGROUND = 0x94D049BB133111EB
TAG_FRAME_DIRECTION = 0xD6E8FEB86659FD93
TAG_FRAME_BACKGROUND = 0xA0761D6478BD642F


@njit(cache=True)
def _hash_unit_rows(ids, seed, d):
    g1 = U64(0x9E3779B97F4A7C15)
    g2 = U64(0xBF58476D1CE4E5B9)
    m2 = U64(0x94D049BB133111EB)
    out = np.empty((ids.size, d), dtype=np.float64)
    for i in range(ids.size):
        ci = seed ^ (ids[i] * g1)
        for j in range(d):
            x = ci ^ (U64(j) * g2)
            x = x + g1
            x ^= x >> U64(30)
            x *= g2
            x ^= x >> U64(27)
            x *= m2
            x ^= x >> U64(31)
            out[i, j] = 2.0 * ((x >> U64(11)) / 9007199254740992.0) - 1.0
        acc = 0.0
        for j in range(d):
            acc += out[i, j] * out[i, j]
        n = np.sqrt(acc)
        for j in range(d):
            out[i, j] /= n
    return out


@njit(cache=True)
def _mix(h, field):
    g1 = U64(0x9E3779B97F4A7C15)
    g2 = U64(0xBF58476D1CE4E5B9)
    m2 = U64(0x94D049BB133111EB)
    x = h ^ field
    x = x + g1
    x ^= x >> U64(30)
    x *= g2
    x ^= x >> U64(27)
    x *= m2
    x ^= x >> U64(31)
    return x


@njit(cache=True)
def _derived_ids(tag, fields):
    n = fields.shape[0]
    out = np.empty(n, dtype=np.uint64)
    for i in range(n):
        h = tag
        for j in range(fields.shape[1]):
            h = _mix(h, fields[i, j])
        out[i] = h
    return out


def _unit_rows(ids: np.ndarray, seed: int, d: int) -> np.ndarray:
    return _hash_unit_rows(np.asarray(ids, dtype=np.uint64), U64(seed), d)


def _renormalize(rows: np.ndarray) -> np.ndarray:
    rows = np.ascontiguousarray(rows, dtype=np.float64)
    return rows / kernels._row_norms(rows)[:, None]


def mock_embed(concept_ids, d: int, seed: int, dtype=np.float32) -> np.ndarray:
    """One unit row per concept id; identical (seed, id, d) yields identical rows."""
    if d < 2:
        raise ParameterError(f"embedding dim must be >= 2, got {d}")
    ids = np.asarray(list(concept_ids), dtype=np.uint64)
    return _unit_rows(ids, seed, d).astype(dtype)


def mock_text_encoder(spec: SceneSpec, d: int, seed: int, dtype=np.float32) -> np.ndarray:
    if not spec.query_concepts:
        raise DegenerateInputError("query has no concepts")
    return mock_embed(spec.query_concepts, d, seed, dtype)


def mock_main_encoder(spec: SceneSpec, d: int, seed: int, dtype=np.float32) -> TokenBatch:
    """Per-patch tokens for every (view, frame, patch) cell of the scene.

    Token t of a patch whose concept list C is non-empty takes concept
    C[t // q] with q = ceil(tokens_per_patch / |C|) (so every token carries
    a planted concept), otherwise a background id unique to
    (view, frame, patch, token).
    """
    if d < 2:
        raise ParameterError(f"embedding dim must be >= 2, got {d}")
    tpp = spec.tokens_per_patch
    base_ids, noise_fields, prov = [], [], []
    for v in spec.views:
        for f in spec.frames:
            for r in range(spec.grid_rows):
                for c in range(spec.grid_cols):
                    cell = spec.cell_concepts(v, f, r, c)
                    q = -(-tpp // max(1, len(cell)))
                    for t in range(tpp):
                        if cell and t // q < len(cell):
                            base_ids.append(cell[t // q])
                        else:
                            base_ids.append(None)
                        noise_fields.append((v, f, r, c, t))
                        prov.append((v, f, r, c, t))

    fields = np.asarray(noise_fields, dtype=np.uint64)
    bg = _derived_ids(U64(TAG_BACKGROUND), fields)
    ids = np.array(
        [bg[i] if b is None else U64(b) for i, b in enumerate(base_ids)], dtype=np.uint64
    )
    noise_ids = _derived_ids(U64(TAG_POSITION_NOISE), fields)

    base = _unit_rows(ids, seed, d)
    noise = _unit_rows(noise_ids, seed, d)
    rows = _renormalize(0.8 * base + 0.2 * noise).astype(dtype)
    return TokenBatch(rows, np.asarray(prov, dtype=np.int64))


def mock_support_encoder(spec: SceneSpec, d: int, seed: int, dtype=np.float32) -> np.ndarray:
    """One pooled token set per view: tokens_per_patch noisy copies of the
    mean of the concepts planted anywhere in that view."""
    if d < 2:
        raise ParameterError(f"embedding dim must be >= 2, got {d}")
    tpp = spec.tokens_per_patch
    out = np.empty((tpp * len(spec.views), d), dtype=np.float64)
    for i, v in enumerate(spec.views):
        ids = sorted(
            {c for (cv, _, _, _), ids in spec.concepts.items() if cv == v for c in ids}
        )
        if ids:
            base = _unit_rows(np.asarray(ids, dtype=np.uint64), seed, d).mean(axis=0)
        else:
            vid = _derived_ids(U64(TAG_VIEW_BACKGROUND), np.asarray([[v]], dtype=np.uint64))
            base = _unit_rows(vid, seed, d)[0]
        fields = np.asarray([[v, t] for t in range(tpp)], dtype=np.uint64)
        noise = _unit_rows(_derived_ids(U64(TAG_SUPPORT_NOISE), fields), seed, d)
        out[i * tpp : (i + 1) * tpp] = 0.8 * base[None, :] + 0.2 * noise
    return _renormalize(out).astype(dtype)


def mock_video_encoder(spec: SceneSpec, d: int, seed: int, dtype=np.float32) -> np.ndarray:
    """One row per frame: mean of the frame's concepts plus a frame direction."""
    if d < 2:
        raise ParameterError(f"embedding dim must be >= 2, got {d}")
    if not spec.frames:
        raise DegenerateInputError("scene has no frames")
    out = np.empty((len(spec.frames), d), dtype=np.float64)
    for i, f in enumerate(spec.frames):
        ids = sorted(
            {c for (_, cf, _, _), ids in spec.concepts.items() if cf == f for c in ids}
        )
        if ids:
            base = _unit_rows(np.asarray(ids, dtype=np.uint64), seed, d).mean(axis=0)
        else:
            fid = _derived_ids(U64(TAG_FRAME_BACKGROUND), np.asarray([[f]], dtype=np.uint64))
            base = _unit_rows(fid, seed, d)[0]
        did = _derived_ids(U64(TAG_FRAME_DIRECTION), np.asarray([[f]], dtype=np.uint64))
        out[i] = base + _unit_rows(did, seed, d)[0]
    return _renormalize(out).astype(dtype)
