"""Regeneration of the golden artifacts shipped under ``data/``.

The goldens pin three independent contracts: the embedding file bytes, the
demo scene document (the canonical example of the scene format), and the
mask images the default pipeline renders for it.  Regenerate only when one
of those contracts deliberately changes.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
import yaml

from . import embfile
from .pipeline import PipelineConfig, make_demo_scene, render_mask, run
from .scene import save_scene
from .verify import GOLDEN_EMB_FILE, GOLDEN_EMB_VALUES


def write_goldens(out_dir) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []

    scene_path = out_dir / "demo_scene.yaml"
    save_scene(make_demo_scene(), scene_path)
    written.append(scene_path)

    config_path = out_dir / "demo_config.yaml"
    with open(config_path, "w", encoding="utf-8") as fh:
        yaml.safe_dump(PipelineConfig().to_dict(), fh, sort_keys=False)
    written.append(config_path)

    emb_path = out_dir / GOLDEN_EMB_FILE
    embfile.save_embeddings(np.asarray(GOLDEN_EMB_VALUES, dtype=np.float32), emb_path)
    written.append(emb_path)

    result = run(PipelineConfig())
    written.extend(render_mask(result.mask, out_dir / "masks"))
    return written
