"""Minimal reverse-mode gradient tape.

The tape records the handful of primitives the selection/enhancement chain
is built from; it is not a general autodiff system.  Forward values are
computed eagerly through the deterministic kernels, so replaying a tape
reproduces every recorded value bit for bit.  Backward passes use plain
vectorized numpy: gradients are checked against finite differences, not
against a bitwise contract.

Top-k row gathering is straight-through: the index choice itself carries no
gradient, but gradients flow into the gathered rows.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import ContractError, ParameterError, ShapeError


@dataclass(frozen=True)
class Ref:
    """Handle to a node on a tape."""

    tape: "Tape"
    index: int

    @property
    def value(self) -> np.ndarray:
        return self.tape.nodes[self.index].value


@dataclass
class _Node:
    op: str
    inputs: tuple[int, ...]
    value: np.ndarray
    ctx: dict = field(default_factory=dict)


class Tape:
    """Recorded computation over 2-D arrays, 1-D score vectors and scalars."""

    def __init__(self):
        self.nodes: list[_Node] = []
        self.params: dict[str, int] = {}

    # -- leaves ----------------------------------------------------------

    def _record(self, op, inputs, value, **ctx) -> Ref:
        self.nodes.append(_Node(op, tuple(i.index for i in inputs), np.asarray(value), ctx))
        return Ref(self, len(self.nodes) - 1)

    def constant(self, value) -> Ref:
        return self._record("leaf", (), np.array(value, copy=True))

    def parameter(self, name: str, value) -> Ref:
        if name in self.params:
            raise ParameterError(f"parameter '{name}' already registered")
        ref = self._record("leaf", (), np.array(value, copy=True))
        self.params[name] = ref.index
        return ref

    # -- primitives ------------------------------------------------------

    def matmul(self, a: Ref, b: Ref) -> Ref:
        return self._record("matmul", (a, b), kernels.matmul(a.value, b.value))

    def transpose(self, a: Ref) -> Ref:
        return self._record("transpose", (a,), np.ascontiguousarray(a.value.T))

    def add(self, a: Ref, b: Ref) -> Ref:
        if a.value.shape != b.value.shape:
            raise ShapeError(f"add shapes differ: {a.value.shape} vs {b.value.shape}")
        return self._record("add", (a, b), a.value + b.value)

    def linear(self, x: Ref, w: Ref, b: Ref) -> Ref:
        return self._record("linear", (x, w, b), kernels.linear(x.value, w.value, b.value))

    def scale(self, x: Ref, s: float) -> Ref:
        return self._record("scale", (x,), x.value * s, s=float(s))

    def mul_rows(self, x: Ref, v: Ref) -> Ref:
        """Scale row i of x by v[i]; v is cast to x's dtype."""
        vv = v.value.astype(x.value.dtype)
        return self._record("mul_rows", (x, v), x.value * vv[:, None])

    def softmax_rows(self, x: Ref, tau: float) -> Ref:
        return self._record(
            "softmax_rows", (x,), kernels.softmax_rows(x.value, tau), tau=float(tau)
        )

    def cosine_rows(self, a: Ref, b: Ref) -> Ref:
        return self._record("cosine_rows", (a, b), kernels.cosine_sim(a.value, b.value))

    def sum_rows(self, x: Ref) -> Ref:
        return self._record("sum_rows", (x,), kernels.row_sums(x.value))

    def sum_all(self, x: Ref) -> Ref:
        return self._record("sum_all", (x,), np.float64(kernels.row_sums(x.value).sum()))

    def minmax_norm(self, v: Ref) -> Ref:
        val = v.value
        lo, hi = val.min(), val.max()
        if hi > lo:
            out = (val - lo) / (hi - lo)
        else:
            out = np.zeros_like(val)
        return self._record("minmax_norm", (v,), out)

    def blend(self, s: Ref, w: Ref, alpha: Ref) -> Ref:
        a = float(alpha.value)
        return self._record("blend", (s, w, alpha), (1.0 - a) * s.value + a * w.value)

    def gather_rows(self, x: Ref, indices) -> Ref:
        idx = np.asarray(indices, dtype=np.int64)
        return self._record("gather_rows", (x,), x.value[idx].copy(), idx=idx)

    def concat_groups(self, x: Ref, c: int) -> Ref:
        k, d = x.value.shape
        if k % c:
            raise ShapeError(f"row count {k} not divisible by group size {c}")
        return self._record("concat_groups", (x,), x.value.reshape(k // c, c * d), c=int(c))

    # -- replay ----------------------------------------------------------

    def replay(self) -> bool:
        """Recompute every node from the leaves; True iff all values match bit for bit."""
        values: list[np.ndarray] = []
        for node in self.nodes:
            ins = [values[i] for i in node.inputs]
            if node.op == "leaf":
                v = node.value
            elif node.op == "matmul":
                v = kernels.matmul(*ins)
            elif node.op == "transpose":
                v = np.ascontiguousarray(ins[0].T)
            elif node.op == "add":
                v = ins[0] + ins[1]
            elif node.op == "linear":
                v = kernels.linear(*ins)
            elif node.op == "scale":
                v = ins[0] * node.ctx["s"]
            elif node.op == "mul_rows":
                v = ins[0] * ins[1].astype(ins[0].dtype)[:, None]
            elif node.op == "softmax_rows":
                v = kernels.softmax_rows(ins[0], node.ctx["tau"])
            elif node.op == "cosine_rows":
                v = kernels.cosine_sim(ins[0], ins[1])
            elif node.op == "sum_rows":
                v = kernels.row_sums(ins[0])
            elif node.op == "sum_all":
                v = np.float64(kernels.row_sums(ins[0]).sum())
            elif node.op == "minmax_norm":
                lo, hi = ins[0].min(), ins[0].max()
                v = (ins[0] - lo) / (hi - lo) if hi > lo else np.zeros_like(ins[0])
            elif node.op == "blend":
                a = float(ins[2])
                v = (1.0 - a) * ins[0] + a * ins[1]
            elif node.op == "gather_rows":
                v = ins[0][node.ctx["idx"]].copy()
            elif node.op == "concat_groups":
                k, d = ins[0].shape
                c = node.ctx["c"]
                v = ins[0].reshape(k // c, c * d)
            else:  # pragma: no cover
                raise ContractError(f"unknown op '{node.op}'")
            values.append(np.asarray(v))
        return all(np.array_equal(v, n.value) for v, n in zip(values, self.nodes))


def gradient(tape: Tape, loss: Ref) -> dict[str, np.ndarray]:
    """Reverse-mode gradients of a scalar loss for every registered parameter."""
    if loss.tape is not tape:
        raise ContractError("loss node belongs to a different tape")
    if np.asarray(loss.value).shape != ():
        raise ContractError(f"loss must be scalar, got shape {np.asarray(loss.value).shape}")

    grads: list[np.ndarray | None] = [None] * len(tape.nodes)

    def accum(i: int, g: np.ndarray) -> None:
        g = np.asarray(g, dtype=np.float64)
        grads[i] = g if grads[i] is None else grads[i] + g

    accum(loss.index, np.float64(1.0))

    for i in range(loss.index, -1, -1):
        g = grads[i]
        if g is None:
            continue
        node = tape.nodes[i]
        ins = node.inputs
        vals = [np.asarray(tape.nodes[j].value, dtype=np.float64) for j in ins]
        if node.op == "leaf":
            continue
        elif node.op == "matmul":
            accum(ins[0], g @ vals[1].T)
            accum(ins[1], vals[0].T @ g)
        elif node.op == "transpose":
            accum(ins[0], g.T)
        elif node.op == "add":
            accum(ins[0], g)
            accum(ins[1], g)
        elif node.op == "linear":
            accum(ins[0], g @ vals[1].T)
            accum(ins[1], vals[0].T @ g)
            accum(ins[2], g.sum(axis=0, keepdims=True))
        elif node.op == "scale":
            accum(ins[0], g * node.ctx["s"])
        elif node.op == "mul_rows":
            accum(ins[0], g * vals[1][:, None])
            accum(ins[1], (g * vals[0]).sum(axis=1))
        elif node.op == "softmax_rows":
            p = np.asarray(node.value, dtype=np.float64)
            dot = (g * p).sum(axis=1, keepdims=True)
            accum(ins[0], p * (g - dot) / node.ctx["tau"])
        elif node.op == "cosine_rows":
            a, b = vals
            s = np.asarray(node.value, dtype=np.float64)
            na = np.sqrt((a * a).sum(axis=1))
            nb = np.sqrt((b * b).sum(axis=1))
            ahat = a / na[:, None]
            bhat = b / nb[:, None]
            ra = (g * s).sum(axis=1)
            accum(ins[0], (g @ bhat - ra[:, None] * ahat) / na[:, None])
            rb = (g * s).sum(axis=0)
            accum(ins[1], (g.T @ ahat - rb[:, None] * bhat) / nb[:, None])
        elif node.op == "sum_rows":
            accum(ins[0], np.broadcast_to(g[:, None], vals[0].shape))
        elif node.op == "sum_all":
            accum(ins[0], np.full(vals[0].shape, float(g)))
        elif node.op == "minmax_norm":
            v = vals[0]
            lo, hi = v.min(), v.max()
            if hi > lo:
                r = hi - lo
                y = np.asarray(node.value, dtype=np.float64)
                gv = g / r
                gv = gv.copy()
                t = (g * y).sum() / r
                gv[np.argmax(v)] -= t
                gv[np.argmin(v)] += t - g.sum() / r
                accum(ins[0], gv)
            else:
                accum(ins[0], np.zeros_like(v))
        elif node.op == "blend":
            a = float(vals[2])
            accum(ins[0], (1.0 - a) * g)
            accum(ins[1], a * g)
            accum(ins[2], np.float64((g * (vals[1] - vals[0])).sum()))
        elif node.op == "gather_rows":
            gx = np.zeros_like(vals[0])
            np.add.at(gx, node.ctx["idx"], g)
            accum(ins[0], gx)
        elif node.op == "concat_groups":
            accum(ins[0], g.reshape(vals[0].shape))
        else:  # pragma: no cover
            raise ContractError(f"unknown op '{node.op}'")

    out: dict[str, np.ndarray] = {}
    for name, idx in tape.params.items():
        g = grads[idx]
        shape = np.asarray(tape.nodes[idx].value).shape
        out[name] = np.zeros(shape) if g is None else np.asarray(g).reshape(shape)
    return out
