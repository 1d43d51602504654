"""Command-line entry points.

Subcommands: ``run`` executes the pipeline and writes tokens, masks and a
report; ``sweep`` runs a grid of (select, compress) ratio pairs and writes
one CSV row per pair; ``verify`` runs the invariant suites; ``goldens``
regenerates the golden artifacts.

Exit codes: 0 success, 1 configuration error, 2 runtime error, 3 I/O or
file-format error, 4 verify-suite failure.  Overrides given as flags take
precedence over values from ``--config``; the effective configuration is
echoed into every report.
"""

from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

import numpy as np
import yaml

from . import embfile, verify
from .errors import FormatError, ParameterError, StageError, TokenSieveError
from .pipeline import (
    EmbeddingSources,
    PipelineConfig,
    planted_recall,
    render_mask,
    run,
)
from .scene import load_scene

SWEEP_CSV_HEADER = "select_ratio,compress_ratio,m_in,k,out_tokens,reduction,recall,wall_ms"


class _CliError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would exit(2); config errors are exit 1
        raise _CliError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="tokensieve", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", type=Path, help="pipeline config YAML")
        p.add_argument("--out", type=Path, default=Path("out"), help="output directory")
        p.add_argument("--scene", type=Path, help="scene YAML (or embedding-sources YAML)")
        p.add_argument("--select-ratio", type=float, dest="select_ratio")
        p.add_argument("--compress-ratio", type=int, dest="compress_ratio")
        p.add_argument("--tau", type=float)
        p.add_argument("--alpha", type=float)
        p.add_argument("--seed", type=int)
        p.add_argument("--views", type=int)
        p.add_argument("--frames", type=int)
        p.add_argument("--grid", type=str, help="patch grid as RxC, e.g. 4x7")
        p.add_argument("--axis", choices=("image", "text"))
        p.add_argument("--q-source", choices=("selected", "all"), dest="q_source")
        p.add_argument("--binary-mask", action="store_true", default=None, dest="binary_mask")
        p.add_argument("--has-class-token", action="store_true", default=None,
                       dest="has_class_token")

    p_run = sub.add_parser("run", help="run the pipeline once")
    add_common(p_run)
    p_run.add_argument("--emit-mask", action="store_true", default=True,
                       help="write mask images (default on for run)")

    p_sweep = sub.add_parser("sweep", help="run a ratio grid")
    add_common(p_sweep)
    p_sweep.add_argument("--pairs", type=str, default="",
                         help="comma list of SELECTxCOMPRESS pairs, e.g. 2x84,3x56")
    p_sweep.add_argument("--target-reduction", type=float, default=168.0,
                         help="declared overall reduction; other products are flagged")
    p_sweep.add_argument("--emit-mask", action="store_true", default=False,
                         help="also write mask images per pair (default off for sweep)")

    p_verify = sub.add_parser("verify", help="run invariant suites")
    p_verify.add_argument("--suite", action="append", default=None,
                          help="suite name, repeatable or comma-separated (default: all)")
    p_verify.add_argument("--goldens-dir", type=Path, default=None)

    p_gold = sub.add_parser("goldens", help="regenerate golden artifacts")
    p_gold.add_argument("--out", type=Path, default=Path("goldens"))
    return parser


_OVERRIDE_FIELDS = (
    "select_ratio", "compress_ratio", "tau", "alpha", "seed", "views", "frames",
    "axis", "q_source", "binary_mask", "has_class_token",
)


def _build_config(args, scene=None) -> PipelineConfig:
    """Merge config file, scene geometry and flag overrides (flags win).

    A flag that contradicts an explicit scene's geometry is an error: the
    scene data could not honor it.
    """
    values: dict = {}
    if args.config:
        with open(args.config, "r", encoding="utf-8") as fh:
            doc = yaml.safe_load(fh) or {}
        if not isinstance(doc, dict):
            raise ParameterError(f"config file {args.config} is not a mapping")
        unknown = set(doc) - set(PipelineConfig().to_dict())
        if unknown:
            raise ParameterError(f"unknown config keys: {', '.join(sorted(unknown))}")
        values.update(doc)

    grid_flag = None
    if getattr(args, "grid", None):
        try:
            rows, cols = (int(x) for x in args.grid.lower().split("x"))
        except ValueError as exc:
            raise ParameterError(f"--grid must look like 4x7, got {args.grid!r}") from exc
        grid_flag = (rows, cols)

    if scene is not None and not isinstance(scene, EmbeddingSources):
        geometry = {
            "views": len(scene.views),
            "frames": max(1, len(scene.frames)),
            "grid_rows": scene.grid_rows,
            "grid_cols": scene.grid_cols,
            "tokens_per_patch": scene.tokens_per_patch,
        }
        for name in ("views", "frames"):
            flag = getattr(args, name, None)
            if flag is not None and flag != geometry[name]:
                raise ParameterError(f"--{name} {flag} contradicts the scene ({geometry[name]})")
        if grid_flag is not None and grid_flag != (scene.grid_rows, scene.grid_cols):
            raise ParameterError(
                f"--grid {grid_flag[0]}x{grid_flag[1]} contradicts the scene "
                f"({scene.grid_rows}x{scene.grid_cols})"
            )
        values.update(geometry)

    for name in _OVERRIDE_FIELDS:
        v = getattr(args, name, None)
        if v is not None:
            values[name] = v
    if grid_flag is not None:
        values["grid_rows"], values["grid_cols"] = grid_flag
    return PipelineConfig(**values)


def _load_scene_arg(path: Path):
    with open(path, "r", encoding="utf-8") as fh:
        doc = yaml.safe_load(fh)
    if isinstance(doc, dict) and "embeddings" in doc:
        emb = doc["embeddings"]
        base = path.parent
        try:
            return EmbeddingSources(
                text=base / emb["text"],
                main=base / emb["main"],
                support=base / emb["support"],
                temporal=(base / emb["temporal"]) if emb.get("temporal") else None,
            )
        except (KeyError, TypeError) as exc:
            raise ParameterError(f"embedding sources in {path} are malformed: {exc}") from exc
    return load_scene(path)


def _execute(config: PipelineConfig, scene, out_dir: Path, emit_mask: bool):
    result = run(config, scene)
    out_dir.mkdir(parents=True, exist_ok=True)
    embfile.save_embeddings(result.final_tokens.astype(np.float32), out_dir / "final_tokens.lvde")
    if emit_mask:
        render_mask(result.mask, out_dir / "masks", binary=config.binary_mask)
    (out_dir / "report.txt").write_text(result.report.to_text(), encoding="utf-8")
    (out_dir / "report.json").write_text(result.report.to_json(), encoding="utf-8")
    return result


def cmd_run(args) -> int:
    scene = _load_scene_arg(args.scene) if args.scene else None
    config = _build_config(args, scene)
    result = _execute(config, scene, args.out, emit_mask=True)
    r = result.report
    print(
        f"tokens {r.m_in} -> selected {r.k_selected} -> out {r.out_tokens} "
        f"(reduction {r.achieved_reduction:g}, nominal {r.nominal_reduction:g})"
    )
    print(f"outputs written to {args.out}")
    return 0


def cmd_sweep(args) -> int:
    scene = _load_scene_arg(args.scene) if args.scene else None
    config = _build_config(args, scene)
    pairs = []
    for chunk in filter(None, (c.strip() for c in args.pairs.split(","))):
        try:
            s, c = chunk.lower().split("x")
            pairs.append((float(s), int(c)))
        except ValueError as exc:
            raise ParameterError(f"bad pair {chunk!r}; expected SELECTxCOMPRESS") from exc
    if not pairs:
        raise ParameterError("sweep needs at least one SELECTxCOMPRESS pair (--pairs)")

    args.out.mkdir(parents=True, exist_ok=True)
    rows = []
    for s, c in pairs:
        cfg = PipelineConfig(**{**config.to_dict(), "select_ratio": s, "compress_ratio": c})
        pair_dir = args.out / f"pair_{s:g}x{c}"
        t0 = time.perf_counter()
        result = _execute(cfg, scene, pair_dir, emit_mask=args.emit_mask)
        wall_ms = (time.perf_counter() - t0) * 1e3
        rep = result.report
        if scene is None:
            recall_scene = _demo_scene_for(cfg)
        elif isinstance(scene, EmbeddingSources):
            recall_scene = None  # no planted-concept ground truth in file mode
        else:
            recall_scene = scene
        recall = (
            planted_recall(recall_scene, result.batch, result.selection.selected_indices)
            if recall_scene is not None
            else float("nan")
        )
        nominal = s * c
        rows.append(
            f"{s:g},{c},{rep.m_in},{rep.k_selected},{rep.out_tokens},"
            f"{nominal:g},{recall:.4f},{wall_ms:.1f}"
        )
        if nominal != args.target_reduction:
            print(
                f"flagged: pair {s:g}x{c} has nominal reduction {nominal:g}, "
                f"not the declared {args.target_reduction:g}"
            )
    csv_path = args.out / "sweep.csv"
    csv_path.write_text(SWEEP_CSV_HEADER + "\n" + "\n".join(rows) + "\n", encoding="utf-8")
    print(f"sweep CSV written to {csv_path}")
    return 0


def _demo_scene_for(config: PipelineConfig):
    from .pipeline import make_demo_scene

    return make_demo_scene(
        views=config.views,
        frames=config.frames,
        grid_rows=config.grid_rows,
        grid_cols=config.grid_cols,
        tokens_per_patch=config.tokens_per_patch,
    )


def cmd_verify(args) -> int:
    names = None
    if args.suite:
        names = [n for part in args.suite for n in part.split(",") if n]
    results = verify.run_suites(names, goldens_dir=args.goldens_dir)
    failed = False
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        detail = f" ({r.detail})" if r.detail else ""
        print(f"{status} {r.name} [{r.seconds:.2f}s]{detail}")
        failed |= not r.passed
    return 4 if failed else 0


def cmd_goldens(args) -> int:
    from .goldens import write_goldens

    written = write_goldens(args.out)
    for path in written:
        print(f"wrote {path}")
    return 0


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command == "run":
            return cmd_run(args)
        if args.command == "sweep":
            return cmd_sweep(args)
        if args.command == "verify":
            return cmd_verify(args)
        if args.command == "goldens":
            return cmd_goldens(args)
        raise _CliError(f"unknown command {args.command}")
    except (_CliError, ParameterError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (OSError, FormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except StageError as exc:
        code = 3 if isinstance(exc.cause, (FormatError, OSError)) else 2
        print(f"error: {exc}", file=sys.stderr)
        return code
    except TokenSieveError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
