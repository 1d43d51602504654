"""End-to-end token pipeline.

Orchestrates encode -> align -> score -> select -> compress -> spatial
restoration -> temporal enhancement -> fuse, enforces the token budget
(select ratio x compress ratio = overall reduction), and renders per-view
selection masks.

Selection always runs on the concatenated multi-view CURRENT-frame main
branch tokens; earlier frames influence the result only through the video
encoder.  A single-frame scene has no temporal context: the video branch is
skipped and fusion sees a zero temporal tensor.

Token accounting: ``budget`` rounds the output count down and back-computes
the selected count as a multiple of the compress ratio, so compression
groups never pad.  The report's ``achieved_reduction`` is measured
(``m_in / out_tokens``); ``nominal_reduction`` is the ratio product a
configuration claims.  The two differ exactly when the ratios do not divide
the token count, which the sweep command surfaces via its flag column.
"""

from __future__ import annotations

import json
import time
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import embfile, encoders
from .enhancement import AttentionParams, fuse, spatial_restoration, temporal_enhancement
from .errors import BudgetError, ParameterError, ShapeError, StageError, TokenSieveError
from .scene import SceneSpec, TokenBatch, tile_patches
from .selection import LinearParams, SelectionParams, SelectionResult, align, run_selection

MASK_BLOCK_PX = 16  # rendered size of one patch cell in mask images


def budget(m: int, select_ratio: float, compress_ratio: int) -> tuple[int, int]:
    """(k, out_tokens) for m input tokens; k is always divisible by the ratio."""
    if select_ratio < 1 or compress_ratio < 1:
        raise ParameterError("ratios must be >= 1")
    if m < select_ratio * compress_ratio:
        raise BudgetError(
            f"{m} tokens cannot support select {select_ratio} x compress {compress_ratio}"
        )
    out_tokens = int(m // (select_ratio * compress_ratio))
    return out_tokens * compress_ratio, out_tokens


@dataclass
class PipelineConfig:
    embed_dim: int = 768
    patch_px: int = 224
    grid_rows: int = 4
    grid_cols: int = 7
    views: int = 6
    frames: int = 4
    tokens_per_patch: int = 49
    select_ratio: float = 2.0
    compress_ratio: int = 84
    tau: float = 0.07
    alpha: float = 0.0
    seed: int = 42
    axis: str = "image"          # similarity softmax axis: image | text
    q_source: str = "selected"   # enhancement queries: selected (compressed) | all
    residual: bool = False
    has_class_token: bool = False
    binary_mask: bool = False
    dtype: str = "float32"
    init: str = "identity"       # align/agg/fusion weights: identity | seeded

    def __post_init__(self):
        if self.embed_dim < 2:
            raise ParameterError(f"embed_dim must be >= 2, got {self.embed_dim}")
        for name in ("patch_px", "grid_rows", "grid_cols", "views", "frames", "tokens_per_patch"):
            if getattr(self, name) < 1:
                raise ParameterError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.select_ratio < 1 or self.compress_ratio < 1:
            raise ParameterError("select_ratio and compress_ratio must be >= 1")
        if not self.tau > 0:
            raise ParameterError(f"tau must be > 0, got {self.tau}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ParameterError(f"alpha must be in [0, 1], got {self.alpha}")
        if self.axis not in ("image", "text"):
            raise ParameterError(f"axis must be 'image' or 'text', got {self.axis}")
        if self.q_source not in ("selected", "all"):
            raise ParameterError(f"q_source must be 'selected' or 'all', got {self.q_source}")
        if self.dtype not in ("float32", "float64"):
            raise ParameterError(f"dtype must be float32 or float64, got {self.dtype}")
        if self.init not in ("identity", "seeded"):
            raise ParameterError(f"init must be 'identity' or 'seeded', got {self.init}")

    @property
    def np_dtype(self):
        return np.float32 if self.dtype == "float32" else np.float64

    @property
    def nominal_reduction(self) -> float:
        return self.select_ratio * self.compress_ratio

    def to_dict(self) -> dict:
        return {
            "embed_dim": self.embed_dim,
            "patch_px": self.patch_px,
            "grid_rows": self.grid_rows,
            "grid_cols": self.grid_cols,
            "views": self.views,
            "frames": self.frames,
            "tokens_per_patch": self.tokens_per_patch,
            "select_ratio": self.select_ratio,
            "compress_ratio": self.compress_ratio,
            "tau": self.tau,
            "alpha": self.alpha,
            "seed": self.seed,
            "axis": self.axis,
            "q_source": self.q_source,
            "residual": self.residual,
            "has_class_token": self.has_class_token,
            "binary_mask": self.binary_mask,
            "dtype": self.dtype,
            "init": self.init,
        }


@dataclass
class EmbeddingSources:
    """Paths to precomputed embedding files driving a run instead of mocks.

    The main file holds current-frame tokens for every view in raster order;
    the temporal file (one row per frame) may be omitted for single-frame
    scenes.  With ``has_class_token`` set, the main file carries
    tokens_per_patch + 1 rows per patch, the support file tokens_per_patch
    + 1 rows per view, and the text/temporal files one extra leading row;
    the leading row of each block is dropped on load.
    """

    text: Path
    main: Path
    support: Path
    temporal: Path | None = None


@dataclass
class SelectionMask:
    """Per (view, frame) boolean volumes: cell true iff that token was selected."""

    volumes: dict[tuple[int, int], np.ndarray]

    @property
    def true_count(self) -> int:
        return int(sum(v.sum() for v in self.volumes.values()))


@dataclass
class PipelineReport:
    m_in: int
    k_selected: int
    out_tokens: int
    final_rows: int
    achieved_reduction: float
    nominal_reduction: float
    stage_ms: dict[str, float] = field(default_factory=dict)
    config: dict = field(default_factory=dict)

    def counts(self) -> dict:
        return {
            "m_in": self.m_in,
            "k_selected": self.k_selected,
            "out_tokens": self.out_tokens,
            "final_rows": self.final_rows,
            "achieved_reduction": self.achieved_reduction,
            "nominal_reduction": self.nominal_reduction,
        }

    def to_text(self) -> str:
        lines = [f"{k}: {v}" for k, v in self.counts().items()]
        lines += [f"stage_ms.{k}: {v:.3f}" for k, v in self.stage_ms.items()]
        lines += [f"config.{k}: {v}" for k, v in sorted(self.config.items())]
        return "\n".join(lines) + "\n"

    def to_json(self) -> str:
        doc = self.counts()
        doc["stage_ms"] = self.stage_ms
        doc["config"] = self.config
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"


@dataclass
class PipelineResult:
    final_tokens: np.ndarray
    text_embeddings: np.ndarray
    selection: SelectionResult
    mask: SelectionMask
    report: PipelineReport
    batch: TokenBatch


@contextmanager
def _stage(name: str, timings: dict):
    t0 = time.perf_counter()
    try:
        yield
    except TokenSieveError as exc:
        raise StageError(name, exc) from exc
    finally:
        timings[name] = (time.perf_counter() - t0) * 1e3


def make_demo_scene(
    views: int = 6,
    frames: int = 4,
    grid_rows: int = 4,
    grid_cols: int = 7,
    tokens_per_patch: int = 49,
    query_concept: int = 7,
    planted_patches: int = 3,
) -> SceneSpec:
    """Synthetic driving scene: the query concept planted in a few cells of
    one view, drifting one column per frame so the video branch sees motion."""
    view_ids = list(range(views))
    frame_ids = list(range(frames))
    target_view = 1 if views > 1 else 0
    base_cells = [(1, 2), (2, 4), (0, 6)][:planted_patches]
    concepts: dict = {}
    for fi, f in enumerate(frame_ids):
        drift = len(frame_ids) - 1 - fi
        for r, c in base_cells:
            cell = (target_view, f, r % grid_rows, (c - drift) % grid_cols)
            concepts.setdefault(cell, []).append(query_concept)
    return SceneSpec(
        views=view_ids,
        frames=frame_ids,
        grid_rows=grid_rows,
        grid_cols=grid_cols,
        query_concepts=[query_concept],
        concepts=concepts,
        tokens_per_patch=tokens_per_patch,
    )


def _drop_block_heads(x: np.ndarray, block: int) -> np.ndarray:
    """Drop the leading row of every ``block + 1`` sized group (class tokens)."""
    if x.shape[0] % (block + 1):
        raise ShapeError(
            f"{x.shape[0]} rows not divisible into blocks of {block + 1} with class tokens"
        )
    groups = x.reshape(-1, block + 1, x.shape[1])
    return np.ascontiguousarray(groups[:, 1:, :].reshape(-1, x.shape[1]))


def _load_sources(config: PipelineConfig, src: EmbeddingSources):
    grid = tile_patches(
        config.grid_rows * config.patch_px, config.grid_cols * config.patch_px, config.patch_px
    )
    tpp = config.tokens_per_patch
    text = embfile.load_embeddings(src.text)
    main = embfile.load_embeddings(src.main)
    support = embfile.load_embeddings(src.support)
    temporal = embfile.load_embeddings(src.temporal) if src.temporal else None
    if config.has_class_token:
        text = text[1:]
        main = _drop_block_heads(main, tpp)
        support = _drop_block_heads(support, tpp)
        if temporal is not None:
            temporal = temporal[1:]
    expected = config.views * grid.n_patches * tpp
    if main.shape[0] != expected:
        raise ShapeError(f"main file holds {main.shape[0]} rows, geometry expects {expected}")
    if support.shape[0] != config.views * tpp:
        raise ShapeError(
            f"support file holds {support.shape[0]} rows, expected {config.views * tpp}"
        )
    if text.shape[0] < 1:
        raise ShapeError("text file holds no rows")
    prov = np.array(
        [
            (v, 0, r, c, t)
            for v in range(config.views)
            for r in range(grid.grid_rows)
            for c in range(grid.grid_cols)
            for t in range(tpp)
        ],
        dtype=np.int64,
    )
    dt = config.np_dtype
    batch = TokenBatch(main.astype(dt), prov)
    return text.astype(dt), batch, support.astype(dt), (
        temporal.astype(dt) if temporal is not None else None
    )


def _encode_scene(config: PipelineConfig, scene: SceneSpec):
    d, seed, dt = config.embed_dim, config.seed, config.np_dtype
    current = scene.restricted_to_frame(scene.current_frame)
    text = encoders.mock_text_encoder(scene, d, seed, dt)
    batch = encoders.mock_main_encoder(current, d, seed, dt)
    support = encoders.mock_support_encoder(current, d, seed, dt)
    temporal = (
        encoders.mock_video_encoder(scene, d, seed, dt) if len(scene.frames) > 1 else None
    )
    return text, batch, support, temporal


def _selection_params(config: PipelineConfig) -> SelectionParams:
    d, dt = config.embed_dim, config.np_dtype
    c = config.compress_ratio
    if config.init == "seeded":
        align_mlp = LinearParams.seeded(d, d, config.seed + 1, dtype=dt)
        agg_mlp = LinearParams.seeded(c * d, d, config.seed + 2, dtype=dt)
    else:
        align_mlp = None
        agg_mlp = None  # averaging projection
    return SelectionParams(
        tau=config.tau,
        alpha=config.alpha,
        select_ratio=config.select_ratio,
        compress_ratio=c,
        align_mlp=align_mlp,
        agg_mlp=agg_mlp,
        axis=config.axis,
    )


def _fusion_params(config: PipelineConfig) -> LinearParams | None:
    if config.init == "seeded":
        return LinearParams.seeded(config.embed_dim, config.embed_dim, config.seed + 3,
                                   dtype=config.np_dtype)
    return None


def build_mask(batch: TokenBatch, selected_indices: np.ndarray, config: PipelineConfig) -> SelectionMask:
    volumes: dict[tuple[int, int], np.ndarray] = {}
    tpp = config.tokens_per_patch
    for v, f in {(int(p[0]), int(p[1])) for p in batch.provenance}:
        volumes[(v, f)] = np.zeros((config.grid_rows, config.grid_cols, tpp), dtype=bool)
    for i in np.asarray(selected_indices):
        v, f, r, c, t = (int(x) for x in batch.provenance[i])
        volumes[(v, f)][r, c, t] = True
    return SelectionMask(volumes)


def render_mask(mask: SelectionMask, out_dir, binary: bool = False) -> list[Path]:
    """One grayscale PGM per (view, frame); patch brightness is the selected
    fraction of its tokens (integer-rounded), or full white in binary mode."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for (v, f), vol in sorted(mask.volumes.items()):
        rows, cols, tpp = vol.shape
        counts = vol.sum(axis=2).astype(np.int64)
        if binary:
            levels = np.where(counts > 0, 255, 0).astype(np.uint8)
        else:
            levels = ((255 * counts + tpp // 2) // tpp).astype(np.uint8)
        img = np.kron(levels, np.ones((MASK_BLOCK_PX, MASK_BLOCK_PX), dtype=np.uint8))
        path = out_dir / f"view{v}_frame{f}.pgm"
        with open(path, "wb") as fh:
            fh.write(f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode("ascii"))
            fh.write(img.tobytes())
        written.append(path)
    return written


def planted_recall(scene: SceneSpec, batch: TokenBatch, selected_indices: np.ndarray) -> float:
    """Fraction of current-frame concept cells with at least one selected token."""
    current = scene.current_frame
    planted = {cell for cell, ids in scene.concepts.items() if cell[1] == current and ids}
    if not planted:
        return float("nan")
    hit = set()
    for i in np.asarray(selected_indices):
        v, f, r, c, _ = (int(x) for x in batch.provenance[i])
        if (v, f, r, c) in planted:
            hit.add((v, f, r, c))
    return len(hit) / len(planted)


def run(config: PipelineConfig, scene: SceneSpec | EmbeddingSources | None = None) -> PipelineResult:
    """Execute the full pipeline over a scene (or precomputed embedding files)."""
    timings: dict[str, float] = {}
    if scene is None:
        scene = make_demo_scene(
            views=config.views,
            frames=config.frames,
            grid_rows=config.grid_rows,
            grid_cols=config.grid_cols,
            tokens_per_patch=config.tokens_per_patch,
        )

    with _stage("encode", timings):
        if isinstance(scene, EmbeddingSources):
            text, batch, support, temporal = _load_sources(config, scene)
        else:
            mismatches = [
                f"{name}: scene {got} vs config {want}"
                for name, got, want in (
                    ("views", len(scene.views), config.views),
                    ("frames", len(scene.frames), config.frames),
                    ("grid_rows", scene.grid_rows, config.grid_rows),
                    ("grid_cols", scene.grid_cols, config.grid_cols),
                    ("tokens_per_patch", scene.tokens_per_patch, config.tokens_per_patch),
                )
                if got != want
            ]
            if mismatches:
                raise ParameterError(
                    "scene geometry does not match config (" + "; ".join(mismatches) + ")"
                )
            text, batch, support, temporal = _encode_scene(config, scene)

    with _stage("budget", timings):
        k, out_tokens = budget(batch.m, config.select_ratio, config.compress_ratio)

    with _stage("select", timings):
        params = _selection_params(config)
        result = run_selection(batch.embeddings, text, params, k)

    with _stage("enhance", timings):
        if config.q_source == "selected":
            queries = result.compressed
        else:
            queries = align(batch.embeddings, params)
        att = AttentionParams()
        enhanced_spatial = spatial_restoration(queries, support, att)
        enhanced_temporal = (
            temporal_enhancement(queries, temporal, att) if temporal is not None else None
        )

    with _stage("fuse", timings):
        final = fuse(enhanced_spatial, enhanced_temporal, _fusion_params(config),
                     residual=config.residual)

    with _stage("mask", timings):
        mask = build_mask(batch, result.selected_indices, config)

    report = PipelineReport(
        m_in=batch.m,
        k_selected=k,
        out_tokens=out_tokens,
        final_rows=final.shape[0],
        achieved_reduction=batch.m / out_tokens,
        nominal_reduction=config.nominal_reduction,
        stage_ms=timings,
        config=config.to_dict(),
    )
    return PipelineResult(final, text, result, mask, report, batch)
