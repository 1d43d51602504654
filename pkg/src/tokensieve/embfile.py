"""Bit-exact embedding file format.

Layout (all little-endian):

====== ======= =====================================
offset size    field
====== ======= =====================================
0      4       magic ``LVDE``
4      4       version, u32, must be 1
8      1       dtype code, u8, 0 = 32-bit float
9      1       ndim, u8, must be 2
10     8       rows, u64
18     8       cols, u64
26     4*r*c   payload, float32, row-major
====== ======= =====================================

Only float32 payloads exist on the wire; callers holding float64 data cast
explicitly before saving so that save -> load round-trips are bit-identical.
"""

from __future__ import annotations

import struct

import numpy as np

from .errors import FormatError, ParameterError

MAGIC = b"LVDE"
VERSION = 1
DTYPE_F32 = 0
_HEADER = struct.Struct("<4sIBBQQ")
PAYLOAD_OFFSET = _HEADER.size  # 26

# dimensions above this are rejected as corrupt rather than allocated
_MAX_DIM = 2**31


def save_embeddings(t: np.ndarray, path) -> None:
    t = np.asarray(t)
    if t.ndim != 2:
        raise ParameterError(f"embedding tensor must be 2-D, got shape {t.shape}")
    if t.dtype != np.float32:
        raise ParameterError(f"file format stores float32 only, got {t.dtype}; cast first")
    header = _HEADER.pack(MAGIC, VERSION, DTYPE_F32, 2, t.shape[0], t.shape[1])
    payload = np.ascontiguousarray(t, dtype="<f4").tobytes()
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(payload)


def load_embeddings(path) -> np.ndarray:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < PAYLOAD_OFFSET:
        raise FormatError(f"truncated header: file ends at offset {len(blob)} of {PAYLOAD_OFFSET}")
    magic, version, dtype, ndim, rows, cols = _HEADER.unpack_from(blob, 0)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r} at offset 0")
    if version != VERSION:
        raise FormatError(f"unsupported version {version} at offset 4")
    if dtype != DTYPE_F32:
        raise FormatError(f"unknown dtype code {dtype} at offset 8")
    if ndim != 2:
        raise FormatError(f"ndim must be 2, got {ndim} at offset 9")
    if rows > _MAX_DIM or cols > _MAX_DIM:
        raise FormatError(f"dimension overflow ({rows} x {cols}) at offset 10")
    expected = PAYLOAD_OFFSET + 4 * rows * cols
    if len(blob) < expected:
        raise FormatError(f"truncated payload: file ends at offset {len(blob)} of {expected}")
    if len(blob) > expected:
        raise FormatError(f"trailing bytes after payload end at offset {expected}")
    flat = np.frombuffer(blob, dtype="<f4", count=rows * cols, offset=PAYLOAD_OFFSET)
    return flat.reshape(rows, cols).astype(np.float32, copy=True)
