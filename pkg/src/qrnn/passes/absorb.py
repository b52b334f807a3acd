"""Passes that fold scales and biases into MultiThreshold nodes."""

from __future__ import annotations

import contextvars

import numpy as np

from ..inference import mt_out_dtype
from ..ir import Graph, Node
from ..rewrite import PassReport, transformation
from ..thresholds import MultiThresholdAttrs
from ._util import const_operand, near_integer, sole_consumer

# When set, a trailing MT -> Mul(m) feeding a graph output is left alone.
KEEP_TERMINAL_DEQUANT = contextvars.ContextVar("keep_terminal_dequant", default=False)


def _channel_vector(ctx, dyn: str, value: np.ndarray, axis: int) -> np.ndarray | None:
    """Constant as a per-channel vector (length 1 or C) along `axis`, else None."""
    shape = ctx.shape(dyn)
    if shape is None:
        return None
    v = np.asarray(value, dtype=np.float64)
    if v.size == 1:
        return v.reshape(1)
    rank = len(shape)
    if v.ndim > rank or rank == 0:
        return None
    ax = axis % rank
    padded = (1,) * (rank - v.ndim) + v.shape
    for i, (dv, dx) in enumerate(zip(padded, shape)):
        if i == ax:
            if dv not in (1, dx):
                return None
        elif dv != 1:
            return None
    return v.reshape(-1)


def _retarget(attrs: MultiThresholdAttrs, thresholds: np.ndarray) -> dict:
    return MultiThresholdAttrs(thresholds, attrs.out_scale, attrs.out_bias,
                               attrs.out_dtype, attrs.channel_axis).to_attrs()


def _absorb_into_mt(graph, report, ctx, op: str):
    for n in list(graph.nodes):
        if n.op_type != op or not ctx.alive(n):
            continue
        split = const_operand(ctx, n)
        if split is None:
            continue
        x, _, value = split
        mt = sole_consumer(ctx, n.outputs[0], "MultiThreshold")
        if mt is None or not ctx.alive(mt):
            continue
        attrs = MultiThresholdAttrs.from_attrs(mt.attributes)
        vec = _channel_vector(ctx, x, value, attrs.channel_axis)
        if vec is None:
            report.diag(f"{n.name}: constant is not per-channel for {mt.name}")
            continue
        if op == "Mul" and np.any(vec <= 0):
            report.diag(f"NonPositiveScale at {n.name}: cannot absorb into {mt.name}")
            continue
        t = attrs.thresholds
        if vec.size > 1 and t.shape[0] == 1:
            t = np.repeat(t, vec.size, axis=0)
        elif vec.size > 1 and t.shape[0] != vec.size:
            report.diag(f"{n.name}: {vec.size} channels vs {t.shape[0]} threshold rows")
            continue
        col = vec[:, None]
        t = t - col if op == "Add" else t / col
        merged = Node("MultiThreshold", mt.name, [x], list(mt.outputs), _retarget(attrs, t))
        ctx.replace([n, mt], [merged])
        report.applied(removed=2, added=1)


@transformation("absorb_add_into_multithreshold")
def absorb_add_into_multithreshold(graph: Graph, report: PassReport, ctx) -> None:
    """Add(a) -> MultiThreshold(T)  becomes  MultiThreshold(T - a)."""
    _absorb_into_mt(graph, report, ctx, "Add")


@transformation("absorb_mul_into_multithreshold")
def absorb_mul_into_multithreshold(graph: Graph, report: PassReport, ctx) -> None:
    """Mul(s) -> MultiThreshold(T)  becomes  MultiThreshold(T / s), for s > 0."""
    _absorb_into_mt(graph, report, ctx, "Mul")


def _with_output(attrs: MultiThresholdAttrs, scale: float, bias: float) -> dict:
    dt = mt_out_dtype(attrs.levels, scale, bias)
    return MultiThresholdAttrs(attrs.thresholds, scale, bias, dt,
                               attrs.channel_axis).to_attrs()


def _trailing(ctx, mt: Node, op: str):
    """(node, scalar) for an exclusive scalar `op` right after `mt`."""
    n = sole_consumer(ctx, mt.outputs[0], op)
    if n is None or not ctx.alive(n):
        return None
    split = const_operand(ctx, n)
    if split is None or split[0] != mt.outputs[0]:
        return None
    v = ctx.scalar(split[1])
    return None if v is None else (n, v)


@transformation("absorb_sign_bias_into_multithreshold")
def absorb_sign_bias_into_multithreshold(graph: Graph, report: PassReport, ctx) -> None:
    """Fold the output offset (and a terminal scale) into MultiThreshold.

    MT -> Add(b)            becomes MT(out_bias + b)
    MT -> Mul(m) -> Add(b)  becomes MT(out_bias + b/m) -> Mul(m) when b/m is integral
    MT -> Mul(m)            becomes MT(out_scale * m, out_bias * m) when m > 0 and
                            the Mul produces a top-level graph output
    """
    for mt in list(graph.nodes):
        if mt.op_type != "MultiThreshold" or not ctx.alive(mt):
            continue
        attrs = MultiThresholdAttrs.from_attrs(mt.attributes)
        add = _trailing(ctx, mt, "Add")
        if add is not None:
            node, b = add
            folded = Node("MultiThreshold", mt.name, list(mt.inputs), list(node.outputs),
                          _with_output(attrs, attrs.out_scale, attrs.out_bias + b))
            ctx.replace([mt, node], [folded])
            report.applied(removed=2, added=1)
            continue
        mul = _trailing(ctx, mt, "Mul")
        if mul is None:
            continue
        mnode, m = mul
        if m == 0:
            continue
        add = _trailing(ctx, mnode, "Add")
        if add is not None:
            anode, b = add
            k = 0 if b == 0 else near_integer(b / m)
            if k is not None:
                new_mt = Node("MultiThreshold", mt.name, list(mt.inputs), list(mt.outputs),
                              _with_output(attrs, attrs.out_scale, attrs.out_bias + k))
                new_mul = Node("Mul", mnode.name, list(mnode.inputs), list(anode.outputs))
                ctx.replace([mt, mnode, anode], [new_mt, new_mul])
                report.applied(removed=3, added=2)
                continue
        terminal = (not ctx.is_body and mnode.outputs[0] in graph.outputs
                    and not KEEP_TERMINAL_DEQUANT.get())
        if terminal and m > 0 and len(ctx.consumers(mnode.outputs[0])) == 0:
            folded = Node("MultiThreshold", mt.name, list(mt.inputs), list(mnode.outputs),
                          _with_output(attrs, attrs.out_scale * m, attrs.out_bias * m))
            ctx.replace([mt, mnode], [folded])
            report.applied(removed=2, added=1)
