import numpy as np

from tokensieve import embfile
from tokensieve.encoders import (
    mock_main_encoder,
    mock_support_encoder,
    mock_text_encoder,
    mock_video_encoder,
)
from tokensieve.pipeline import EmbeddingSources


def write_sources(tmp_path, scene, d, seed, with_class_rows=False):
    """Save mock encoder outputs as embedding files, optionally with class rows."""
    tmp_path.mkdir(parents=True, exist_ok=True)
    current = scene.restricted_to_frame(scene.current_frame)
    text = mock_text_encoder(scene, d, seed)
    main = mock_main_encoder(current, d, seed).embeddings
    support = mock_support_encoder(current, d, seed)
    temporal = mock_video_encoder(scene, d, seed) if len(scene.frames) > 1 else None

    if with_class_rows:
        tpp = scene.tokens_per_patch
        junk = np.full((1, d), 0.123, dtype=np.float32)
        main = np.concatenate(
            [np.concatenate([junk, blk]) for blk in main.reshape(-1, tpp, d)]
        )
        support = np.concatenate(
            [np.concatenate([junk, blk]) for blk in support.reshape(-1, tpp, d)]
        )
        text = np.concatenate([junk, text])
        if temporal is not None:
            temporal = np.concatenate([junk, temporal])

    paths = {}
    for name, arr in (("text", text), ("main", main), ("support", support),
                      ("temporal", temporal)):
        if arr is None:
            continue
        path = tmp_path / f"{name}.lvde"
        embfile.save_embeddings(np.ascontiguousarray(arr, dtype=np.float32), path)
        paths[name] = path
    return EmbeddingSources(
        text=paths["text"], main=paths["main"], support=paths["support"],
        temporal=paths.get("temporal"),
    )
