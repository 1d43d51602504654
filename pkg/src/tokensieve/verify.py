"""Invariant suites behind ``tokensieve verify`` and the acceptance tests.

Each suite re-derives its expectation independently of the code path it
checks: selection against a naive loop oracle, gradients against central
finite differences, token budgets against hand arithmetic, file and mask
bytes against frozen goldens.
"""

from __future__ import annotations

import math
import tempfile
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import embfile, encoders, kernels
from .autodiff import Tape, gradient
from .enhancement import token_wise_attention
from .pipeline import (
    PipelineConfig,
    budget,
    make_demo_scene,
    planted_recall,
    render_mask,
    run,
)
from .selection import LinearParams, SelectionParams, oracle_select, run_selection

DATA_DIR = Path(__file__).parent / "data"

# frozen output of the reference hash: unit row for (seed=42, concept=0, d=4)
GOLDEN_HASH_ROW = (
    0.3647804593978688,
    -0.5286058914544444,
    0.5354557075932911,
    -0.548450739052196,
)

# frozen 2x3 embedding file payload (values chosen to be exact in float32)
GOLDEN_EMB_VALUES = np.array(
    [[1.0, -2.5, 0.25], [3.5, 0.0, -0.125]], dtype=np.float32
)
GOLDEN_EMB_FILE = "golden_embedding.lvde"


@dataclass
class SuiteResult:
    name: str
    passed: bool
    detail: str
    seconds: float


def _result(name, t0, passed, detail="") -> SuiteResult:
    return SuiteResult(name, passed, detail, time.perf_counter() - t0)


# ---------------------------------------------------------------------------
# token budget arithmetic
# ---------------------------------------------------------------------------

def suite_budget() -> SuiteResult:
    t0 = time.perf_counter()
    m = 49 * 6 * 28
    problems = []
    for sr, c in ((2, 84), (3, 56), (84, 2)):
        k, out = budget(m, sr, c)
        if out != 49 or m / out != 168.0 or k != out * c:
            problems.append(f"pair ({sr},{c}) gave k={k} out={out}")
    k, out = budget(m, 6, 26)
    if 6 * 26 != 156:
        problems.append("nominal product of (6,26) is not 156")
    if out != m // 156 or k != out * 26:
        problems.append(f"pair (6,26) gave k={k} out={out}")
    flagged = 6 * 26 != 168
    if not flagged:
        problems.append("pair (6,26) was not flagged against target 168")
    return _result("budget", t0, not problems, "; ".join(problems))


# ---------------------------------------------------------------------------
# selection oracle equivalence
# ---------------------------------------------------------------------------

def suite_oracle(instances: int = 200) -> SuiteResult:
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    mismatches = 0
    for trial in range(instances):
        m = int(rng.integers(2, 65))
        n = int(rng.integers(1, 17))
        d = int(rng.integers(4, 17))
        dt = np.float32 if trial % 2 else np.float64
        i_raw = rng.standard_normal((m, d)).astype(dt)
        t_text = rng.standard_normal((n, d)).astype(dt)
        align_mlp = LinearParams.seeded(d, d, trial, dtype=dt) if trial % 3 == 0 else None
        params = SelectionParams(
            tau=float(rng.uniform(0.05, 2.0)),
            alpha=float(rng.choice([0.0, 0.5, 1.0])),
            align_mlp=align_mlp,
            compress_ratio=1,
        )
        k = int(rng.integers(1, m + 1))
        got = run_selection(i_raw, t_text, params, k).selected_indices.tolist()
        want = oracle_select(i_raw, t_text, params, k)
        if got != want:
            mismatches += 1
    return _result(
        "oracle", t0, mismatches == 0, f"{mismatches} mismatches in {instances} instances"
    )


# ---------------------------------------------------------------------------
# column stochasticity and mass conservation
# ---------------------------------------------------------------------------

def suite_stochasticity(instances: int = 1000) -> SuiteResult:
    t0 = time.perf_counter()
    from .selection import normalize_similarity, relevance_scores

    rng = np.random.default_rng(7)
    worst_col, worst_mass = 0.0, 0.0
    for trial in range(instances):
        m = int(rng.integers(1, 40))
        n = int(rng.integers(1, 12))
        s = rng.uniform(-1, 1, size=(m, n))
        if trial % 2:
            s = s.astype(np.float32)
        tau = float(rng.uniform(1e-3, 1e3))
        p = normalize_similarity(s, tau)
        worst_col = max(worst_col, float(np.abs(p.sum(axis=0) - 1.0).max()))
        worst_mass = max(worst_mass, abs(float(relevance_scores(p).sum()) - n))
    ok = worst_col <= 1e-6 and worst_mass <= 1e-5
    return _result(
        "stochasticity", t0, ok,
        f"worst column-sum dev {worst_col:.2e}, worst mass dev {worst_mass:.2e}",
    )


# ---------------------------------------------------------------------------
# attention invariants
# ---------------------------------------------------------------------------

def suite_attention(instances: int = 200) -> SuiteResult:
    t0 = time.perf_counter()
    rng = np.random.default_rng(99)
    problems = []
    for trial in range(instances):
        qn = int(rng.integers(1, 12))
        r = int(rng.integers(1, 12))
        d = int(rng.integers(2, 16))
        dt = np.float32 if trial % 2 else np.float64
        q = rng.standard_normal((qn, d)).astype(dt)
        k = rng.standard_normal((r, d)).astype(dt)
        v = rng.standard_normal((r, d)).astype(dt)
        out = token_wise_attention(q, k, v)
        if out.shape != (qn, d):
            problems.append(f"shape {out.shape} != {(qn, d)}")
            break
        lo = v.min(axis=0) - 1e-6
        hi = v.max(axis=0) + 1e-6
        if not ((out >= lo) & (out <= hi)).all():
            problems.append(f"trial {trial}: convex hull violated")
            break
        perm = rng.permutation(r)
        out_p = token_wise_attention(q, k[perm].copy(), v[perm].copy())
        if np.abs(out.astype(np.float64) - out_p.astype(np.float64)).max() > 1e-6:
            problems.append(f"trial {trial}: permutation invariance violated")
            break
        single = token_wise_attention(q, k[:1].copy(), v[:1].copy())
        if not np.array_equal(single, np.repeat(v[:1], qn, axis=0)):
            problems.append(f"trial {trial}: singleton key identity violated")
            break
    return _result("attention", t0, not problems, "; ".join(problems))


# ---------------------------------------------------------------------------
# gradient checks
# ---------------------------------------------------------------------------

def chain_instance(seed: int):
    """One random configuration of the differentiable selection/enhancement chain."""
    rng = np.random.default_rng(seed)
    m = int(rng.integers(8, 21))
    n = int(rng.integers(2, 6))
    d = int(rng.integers(4, 11))
    c = int(rng.choice([1, 2]))
    k = c * int(rng.integers(1, max(2, m // (2 * c))))
    r_sup = int(rng.integers(2, 6))
    t_frames = int(rng.integers(1, 4))  # 1 means no temporal branch
    data = {
        "i": rng.standard_normal((m, d)),
        "t": rng.standard_normal((n, d)),
        "e_sup": rng.standard_normal((r_sup, d)),
        "e_temp": rng.standard_normal((t_frames, d)) if t_frames > 1 else None,
    }
    params = {
        "align_w": np.eye(d) + 0.1 * rng.standard_normal((d, d)),
        "align_b": 0.1 * rng.standard_normal((1, d)),
        "alpha": np.float64(rng.uniform(0.2, 0.8)),
        "agg_w": rng.standard_normal((c * d, d)) / math.sqrt(c * d),
        "agg_b": 0.1 * rng.standard_normal((1, d)),
        "fus_w": np.eye(d) + 0.1 * rng.standard_normal((d, d)),
        "fus_b": 0.1 * rng.standard_normal((1, d)),
    }
    meta = {"k": k, "c": c, "tau": float(rng.uniform(0.3, 1.5)), "d": d}
    return data, params, meta


def build_chain(data, params, meta, dtype, frozen_idx=None):
    """Tape for the map -> gather -> compress -> attention -> fusion chain.

    The gathered rows are scaled by their map scores so the blend parameter
    keeps a live gradient path (hard indexing alone would zero it); the
    index choice itself is straight-through and can be frozen for finite
    differencing.
    """
    cast = lambda a: np.asarray(a, dtype=dtype)
    tape = Tape()
    i_c = tape.constant(cast(data["i"]))
    t_c = tape.constant(cast(data["t"]))
    aw = tape.parameter("align_w", cast(params["align_w"]))
    ab = tape.parameter("align_b", cast(params["align_b"]))
    aligned = tape.linear(i_c, aw, ab)
    sim = tape.cosine_rows(aligned, t_c)
    p = tape.transpose(tape.softmax_rows(tape.transpose(sim), meta["tau"]))
    s_sum = tape.sum_rows(p)
    w = tape.sum_rows(aligned)
    alpha = tape.parameter("alpha", np.float64(params["alpha"]))
    m_map = tape.blend(tape.minmax_norm(s_sum), tape.minmax_norm(w), alpha)
    idx = frozen_idx if frozen_idx is not None else kernels.topk_indices(m_map.value, meta["k"])
    picked = tape.mul_rows(tape.gather_rows(aligned, idx), tape.gather_rows(m_map, idx))
    gw = tape.parameter("agg_w", cast(params["agg_w"]))
    gb = tape.parameter("agg_b", cast(params["agg_b"]))
    compressed = tape.linear(tape.concat_groups(picked, meta["c"]), gw, gb)

    def attend(queries, context):
        ctx = tape.constant(cast(context))
        scores = tape.scale(tape.matmul(queries, tape.transpose(ctx)), 1.0 / math.sqrt(meta["d"]))
        return tape.matmul(tape.softmax_rows(scores, 1.0), ctx)

    combined = attend(compressed, data["e_sup"])
    if data["e_temp"] is not None:
        combined = tape.add(combined, attend(compressed, data["e_temp"]))
    fw = tape.parameter("fus_w", cast(params["fus_w"]))
    fb = tape.parameter("fus_b", cast(params["fus_b"]))
    loss = tape.sum_all(tape.linear(combined, fw, fb))
    return tape, loss, idx


def finite_diff_grads(data, params, meta, frozen_idx, names, coords, h=1e-5):
    """Central finite differences of the float64 chain at sampled coordinates."""
    def loss_at(p):
        _, loss, _ = build_chain(data, p, meta, np.float64, frozen_idx=frozen_idx)
        return float(loss.value)

    out = {}
    for name in names:
        base = np.asarray(params[name], dtype=np.float64)
        g = {}
        for flat in coords[name]:
            plus = {k: np.array(v, dtype=np.float64, copy=True) for k, v in params.items()}
            minus = {k: np.array(v, dtype=np.float64, copy=True) for k, v in params.items()}
            plus[name].reshape(-1)[flat] += h
            minus[name].reshape(-1)[flat] -= h
            g[flat] = (loss_at(plus) - loss_at(minus)) / (2 * h)
        out[name] = (base, g)
    return out


def check_chain_gradients(seed: int, dtype, tol: float, coords_per_param: int = 8) -> float:
    """Worst per-parameter relative error of tape gradients vs finite differences."""
    data, params, meta = chain_instance(seed)
    tape, loss, idx = build_chain(data, params, meta, dtype)
    grads = gradient(tape, loss)
    rng = np.random.default_rng(seed + 55555)
    names = list(params)
    coords = {
        name: sorted(
            rng.choice(
                np.asarray(params[name]).size,
                size=min(coords_per_param, np.asarray(params[name]).size),
                replace=False,
            ).tolist()
        )
        for name in names
    }
    fd = finite_diff_grads(data, params, meta, idx, names, coords)
    worst = 0.0
    for name in names:
        _, fd_vals = fd[name]
        got = np.asarray(grads[name], dtype=np.float64).reshape(-1)
        diff = max(abs(got[flat] - fd_vals[flat]) for flat in coords[name])
        scale = max(max(abs(v) for v in fd_vals.values()), 1e-6)
        worst = max(worst, diff / scale)
    return worst


def suite_gradients(configs: int = 20) -> SuiteResult:
    t0 = time.perf_counter()
    worst32 = worst64 = 0.0
    for seed in range(configs):
        worst32 = max(worst32, check_chain_gradients(seed, np.float32, 1e-4))
        worst64 = max(worst64, check_chain_gradients(seed, np.float64, 1e-6))
    ok = worst32 <= 1e-4 and worst64 <= 1e-6
    return _result(
        "gradients", t0, ok,
        f"worst rel err float32 {worst32:.2e} (tol 1e-4), float64 {worst64:.2e} (tol 1e-6)",
    )


# ---------------------------------------------------------------------------
# planted-relevance recall
# ---------------------------------------------------------------------------

def suite_planted(seeds: int = 100, required: int = 95) -> SuiteResult:
    t0 = time.perf_counter()
    scene = make_demo_scene(views=1, frames=1)
    d = 768
    perfect = 0
    params = SelectionParams(tau=0.07, alpha=0.0, select_ratio=2.0, compress_ratio=1)
    for seed in range(seeds):
        text = encoders.mock_text_encoder(scene, d, seed)
        batch = encoders.mock_main_encoder(scene, d, seed)
        k, _ = budget(batch.m, 2.0, 1)
        result = run_selection(batch.embeddings, text, params, k)
        if planted_recall(scene, batch, result.selected_indices) == 1.0:
            perfect += 1
    return _result(
        "planted", t0, perfect >= required,
        f"{perfect}/{seeds} seeds with full recall (need >= {required})",
    )


# ---------------------------------------------------------------------------
# end-to-end determinism
# ---------------------------------------------------------------------------

def suite_determinism() -> SuiteResult:
    t0 = time.perf_counter()
    problems = []
    with tempfile.TemporaryDirectory() as tmp:
        dirs = [Path(tmp) / "a", Path(tmp) / "b"]
        for out in dirs:
            out.mkdir()
            res = run(PipelineConfig())
            embfile.save_embeddings(res.final_tokens.astype(np.float32), out / "final.lvde")
            render_mask(res.mask, out / "masks")
            (out / "counts.txt").write_text(repr(sorted(res.report.counts().items())))
        for rel in ["final.lvde", "counts.txt"] + [
            f"masks/{p.name}" for p in sorted((dirs[0] / "masks").glob("*.pgm"))
        ]:
            b0 = (dirs[0] / rel).read_bytes()
            b1 = (dirs[1] / rel).read_bytes()
            if b0 != b1:
                problems.append(f"{rel} differs between runs")
    return _result("determinism", t0, not problems, "; ".join(problems))


# ---------------------------------------------------------------------------
# format goldens
# ---------------------------------------------------------------------------

def suite_goldens(goldens_dir: Path | None = None) -> SuiteResult:
    t0 = time.perf_counter()
    goldens_dir = Path(goldens_dir) if goldens_dir else DATA_DIR
    problems = []

    row = encoders.mock_embed([0], 4, 42, dtype=np.float64)[0]
    if tuple(row) != GOLDEN_HASH_ROW:
        problems.append(f"hash golden row mismatch: {row.tolist()}")

    emb_path = goldens_dir / GOLDEN_EMB_FILE
    try:
        loaded = embfile.load_embeddings(emb_path)
        if not np.array_equal(loaded, GOLDEN_EMB_VALUES):
            problems.append("golden embedding values differ")
        with tempfile.TemporaryDirectory() as tmp:
            rt = Path(tmp) / "rt.lvde"
            embfile.save_embeddings(loaded, rt)
            if rt.read_bytes() != emb_path.read_bytes():
                problems.append("golden embedding bytes do not round-trip")
    except Exception as exc:  # noqa: BLE001 - reported, not raised
        problems.append(f"golden embedding file: {exc}")

    mask_dir = goldens_dir / "masks"
    golden_masks = sorted(mask_dir.glob("*.pgm")) if mask_dir.is_dir() else []
    if not golden_masks:
        problems.append(f"no golden masks under {mask_dir}")
    else:
        res = run(PipelineConfig())
        with tempfile.TemporaryDirectory() as tmp:
            written = render_mask(res.mask, tmp)
            fresh = {p.name: p.read_bytes() for p in written}
            for golden in golden_masks:
                if golden.name not in fresh:
                    problems.append(f"mask {golden.name} not produced")
                elif fresh[golden.name] != golden.read_bytes():
                    problems.append(f"mask {golden.name} differs from golden")
    return _result("goldens", t0, not problems, "; ".join(problems))


# ---------------------------------------------------------------------------
# input-type robustness
# ---------------------------------------------------------------------------

def suite_robustness() -> SuiteResult:
    t0 = time.perf_counter()
    problems = []
    shapes = {
        "multiview-only": dict(views=4, frames=1),
        "multiframe-only": dict(views=1, frames=4),
        "single-single": dict(views=1, frames=1),
    }
    for label, kw in shapes.items():
        config = PipelineConfig(
            embed_dim=32, grid_rows=2, grid_cols=3, tokens_per_patch=9,
            select_ratio=2.0, compress_ratio=3, **kw,
        )
        try:
            res = run(config)
        except Exception as exc:  # noqa: BLE001 - reported, not raised
            problems.append(f"{label}: failed with {exc}")
            continue
        r = res.report
        expected_m = config.views * config.grid_rows * config.grid_cols * config.tokens_per_patch
        if r.m_in != expected_m:
            problems.append(f"{label}: m_in {r.m_in} != {expected_m}")
        if r.out_tokens * config.compress_ratio != r.k_selected:
            problems.append(f"{label}: out x c != k")
        if r.final_rows != r.out_tokens or r.out_tokens < 1:
            problems.append(f"{label}: final rows {r.final_rows} vs out {r.out_tokens}")
        if res.mask.true_count != r.k_selected:
            problems.append(f"{label}: mask count {res.mask.true_count} != k {r.k_selected}")
    return _result("robustness", t0, not problems, "; ".join(problems))


SUITES = {
    "budget": suite_budget,
    "oracle": suite_oracle,
    "stochasticity": suite_stochasticity,
    "attention": suite_attention,
    "gradients": suite_gradients,
    "planted": suite_planted,
    "determinism": suite_determinism,
    "goldens": suite_goldens,
    "robustness": suite_robustness,
}


def run_suites(names=None, goldens_dir=None) -> list[SuiteResult]:
    names = list(names) if names else list(SUITES)
    unknown = [n for n in names if n not in SUITES]
    if unknown:
        from .errors import ParameterError

        raise ParameterError(f"unknown suite(s): {', '.join(unknown)}")
    results = []
    for name in names:
        if name == "goldens":
            results.append(suite_goldens(goldens_dir))
        else:
            results.append(SUITES[name]())
    return results
