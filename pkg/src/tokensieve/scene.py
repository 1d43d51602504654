"""Scene geometry and token bookkeeping.

A :class:`SceneSpec` is the synthetic stand-in for a set of camera images
plus a natural-language query: it names which integer concepts appear in
which (view, frame, patch-cell) and which concepts the query asks about.
Scenes serialize to a small YAML document (see ``data/demo_scene.yaml``
for the canonical example)::

    views: [0, 1, 2, 3, 4, 5]
    frames: [0, 1, 2, 3]
    grid_rows: 4
    grid_cols: 7
    tokens_per_patch: 49
    query_concepts: [7]
    concepts:
      - {view: 1, frame: 3, row: 1, col: 2, ids: [7]}

Token provenance is kept in raster order throughout: rows sorted by
(view, frame, patch row, patch col, intra-patch index).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import yaml

from .errors import ParameterError, ShapeError, TilingError

Cell = tuple[int, int, int, int]  # (view, frame, patch row, patch col)


@dataclass(frozen=True)
class PatchGrid:
    image_height: int
    image_width: int
    patch_size: int
    grid_rows: int
    grid_cols: int

    @property
    def n_patches(self) -> int:
        return self.grid_rows * self.grid_cols


def tile_patches(h: int, w: int, p: int) -> PatchGrid:
    """Divide an h x w image into whole p x p patches."""
    if h <= 0 or w <= 0 or p <= 0:
        raise ParameterError(f"dimensions must be positive, got ({h}, {w}, {p})")
    if h % p or w % p:
        raise TilingError(f"{h}x{w} image not divisible into {p}x{p} patches")
    return PatchGrid(h, w, p, h // p, w // p)


@dataclass
class SceneSpec:
    views: list[int]
    frames: list[int]
    grid_rows: int
    grid_cols: int
    query_concepts: list[int]
    concepts: dict[Cell, list[int]] = field(default_factory=dict)
    tokens_per_patch: int = 49

    def __post_init__(self):
        if not self.views:
            raise ParameterError("views must be non-empty")
        for name, ids in (("views", self.views), ("frames", self.frames)):
            if list(ids) != sorted(set(ids)):
                raise ParameterError(f"{name} must be strictly increasing, got {ids}")
        if self.grid_rows < 1 or self.grid_cols < 1:
            raise ParameterError("grid dimensions must be >= 1")
        if self.tokens_per_patch < 1:
            raise ParameterError("tokens_per_patch must be >= 1")
        for c in self.query_concepts:
            if c < 0:
                raise ParameterError(f"concept ids must be >= 0, got {c}")
        for (v, f, r, c), ids in self.concepts.items():
            if v not in self.views or f not in self.frames:
                raise ParameterError(f"concept cell ({v},{f},{r},{c}) outside scene")
            if not (0 <= r < self.grid_rows and 0 <= c < self.grid_cols):
                raise ParameterError(f"concept cell ({v},{f},{r},{c}) outside grid")
            for cid in ids:
                if cid < 0:
                    raise ParameterError(f"concept ids must be >= 0, got {cid}")

    @property
    def current_frame(self) -> int:
        """The most recent frame: the one whose tokens feed selection."""
        if not self.frames:
            raise ParameterError("scene has no frames")
        return self.frames[-1]

    def restricted_to_frame(self, frame: int) -> "SceneSpec":
        return SceneSpec(
            views=list(self.views),
            frames=[frame],
            grid_rows=self.grid_rows,
            grid_cols=self.grid_cols,
            query_concepts=list(self.query_concepts),
            concepts={k: list(v) for k, v in self.concepts.items() if k[1] == frame},
            tokens_per_patch=self.tokens_per_patch,
        )

    def cell_concepts(self, view: int, frame: int, row: int, col: int) -> list[int]:
        return self.concepts.get((view, frame, row, col), [])


def save_scene(spec: SceneSpec, path) -> None:
    doc = {
        "views": list(spec.views),
        "frames": list(spec.frames),
        "grid_rows": spec.grid_rows,
        "grid_cols": spec.grid_cols,
        "tokens_per_patch": spec.tokens_per_patch,
        "query_concepts": list(spec.query_concepts),
        "concepts": [
            {"view": v, "frame": f, "row": r, "col": c, "ids": list(ids)}
            for (v, f, r, c), ids in sorted(spec.concepts.items())
        ],
    }
    with open(path, "w", encoding="utf-8") as fh:
        yaml.safe_dump(doc, fh, sort_keys=False)


def load_scene(path) -> SceneSpec:
    with open(path, "r", encoding="utf-8") as fh:
        doc = yaml.safe_load(fh)
    if not isinstance(doc, dict):
        raise ParameterError(f"scene file {path} is not a mapping")
    try:
        concepts = {
            (e["view"], e["frame"], e["row"], e["col"]): [int(i) for i in e["ids"]]
            for e in doc.get("concepts", [])
        }
        return SceneSpec(
            views=[int(v) for v in doc["views"]],
            frames=[int(f) for f in doc["frames"]],
            grid_rows=int(doc["grid_rows"]),
            grid_cols=int(doc["grid_cols"]),
            query_concepts=[int(c) for c in doc["query_concepts"]],
            concepts=concepts,
            tokens_per_patch=int(doc.get("tokens_per_patch", 49)),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ParameterError(f"scene file {path} is malformed: {exc}") from exc


@dataclass
class TokenBatch:
    """Embedding rows plus per-row (view, frame, patch row, patch col, token) provenance."""

    embeddings: np.ndarray
    provenance: np.ndarray

    def __post_init__(self):
        self.provenance = np.asarray(self.provenance, dtype=np.int64)
        if self.provenance.ndim != 2 or self.provenance.shape[1] != 5:
            raise ShapeError(f"provenance must be (m, 5), got {self.provenance.shape}")
        if self.provenance.shape[0] != self.embeddings.shape[0]:
            raise ShapeError("provenance length must match embedding rows")
        p = self.provenance
        order = np.lexsort((p[:, 4], p[:, 3], p[:, 2], p[:, 1], p[:, 0]))
        if not np.array_equal(order, np.arange(p.shape[0])):
            raise ShapeError("provenance rows must be in raster order")
        if p.shape[0] > 1 and not (p[1:] != p[:-1]).any(axis=1).all():
            raise ShapeError("provenance rows must be unique")

    @property
    def m(self) -> int:
        return self.embeddings.shape[0]

    @property
    def d(self) -> int:
        return self.embeddings.shape[1]
