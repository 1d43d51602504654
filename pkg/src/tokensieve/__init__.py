"""Query-aware visual token selection and spatial-temporal enhancement.

A desk-scale library and CLI for the token side of a multi-view,
multi-frame vision-language pipeline: deterministic mock encoders plant
known concepts into known patches, a query-aware selector keeps the most
relevant tokens under a fixed budget, and cross-attention over support and
video context restores what hard selection throws away.
"""

from .autodiff import Ref, Tape, gradient
from .embfile import load_embeddings, save_embeddings
from .encoders import (
    mock_embed,
    mock_main_encoder,
    mock_support_encoder,
    mock_text_encoder,
    mock_video_encoder,
)
from .enhancement import (
    AttentionParams,
    fuse,
    spatial_restoration,
    temporal_enhancement,
    token_wise_attention,
)
from .errors import (
    BudgetError,
    ContractError,
    DegenerateInputError,
    FormatError,
    ParameterError,
    ShapeError,
    StageError,
    TilingError,
    TokenSieveError,
)
from .kernels import cosine_sim, linear, matmul, row_sums, softmax_rows, topk_indices
from .pipeline import (
    EmbeddingSources,
    PipelineConfig,
    PipelineReport,
    PipelineResult,
    SelectionMask,
    budget,
    build_mask,
    make_demo_scene,
    planted_recall,
    render_mask,
    run,
)
from .scene import PatchGrid, SceneSpec, TokenBatch, load_scene, save_scene, tile_patches
from .selection import (
    LinearParams,
    SelectionParams,
    SelectionResult,
    align,
    compress,
    normalize_similarity,
    oracle_select,
    relevance_scores,
    run_selection,
    select,
    selection_map,
    token_weights,
)

__version__ = "0.1.0"
