"""Passes that reorder scalar/bias operations and collapse constant chains."""

from __future__ import annotations

import numpy as np

from ..ir import Graph, Node
from ..rewrite import PassReport, transformation
from ._util import (add_value_const, both_int, const_operand, keeps_shape,
                    near_integer, sole_consumer)

LINEAR_OPS = ("MatMul", "Conv2D")


@transformation("move_add_past_mul")
def move_add_past_mul(graph: Graph, report: PassReport, ctx) -> None:
    """(x + a) * b  becomes  x * b + a * b."""
    for add in list(graph.nodes):
        if add.op_type != "Add" or not ctx.alive(add):
            continue
        split = const_operand(ctx, add)
        if split is None:
            continue
        x, a_name, a = split
        mul = sole_consumer(ctx, add.outputs[0], "Mul")
        if mul is None or not ctx.alive(mul):
            continue
        msplit = const_operand(ctx, mul)
        if msplit is None or msplit[0] != add.outputs[0]:
            continue
        _, b_name, b = msplit
        int_ok = both_int(ctx, a_name, b_name)
        ab = add_value_const(ctx, add.name + "_moved", a * b, int_ok)
        mid = ctx.fresh(mul.name + "_out")
        ctx.replace([add, mul], [
            Node("Mul", mul.name, [x, b_name], [mid]),
            Node("Add", add.name, [mid, ab], [mul.outputs[0]]),
        ])
        report.applied(removed=2, added=2)


@transformation("move_scalar_add_past_matmul")
def move_scalar_add_past_matmul(graph: Graph, report: PassReport, ctx) -> None:
    """(x + a) @ W  becomes  x @ W + a * colsum(W) for scalar a and constant W."""
    for add in list(graph.nodes):
        if add.op_type != "Add" or not ctx.alive(add):
            continue
        split = const_operand(ctx, add)
        if split is None:
            continue
        x, a_name, _ = split
        a = ctx.scalar(a_name)
        mm = sole_consumer(ctx, add.outputs[0], "MatMul")
        if a is None or mm is None or not ctx.alive(mm):
            continue
        if mm.inputs[0] != add.outputs[0]:
            continue
        w = ctx.const(mm.inputs[1])
        if w is None or w.ndim != 2:
            continue
        int_ok = both_int(ctx, a_name, mm.inputs[1])
        bias = add_value_const(ctx, add.name + "_colsum",
                               a * w.astype(np.float64).sum(axis=0), int_ok)
        mid = ctx.fresh(mm.name + "_out")
        ctx.replace([add, mm], [
            Node("MatMul", mm.name, [x, mm.inputs[1]], [mid], dict(mm.attributes)),
            Node("Add", add.name, [mid, bias], [mm.outputs[0]]),
        ])
        report.applied(removed=2, added=2)


@transformation("move_scalar_mul_past_matmul")
def move_scalar_mul_past_matmul(graph: Graph, report: PassReport, ctx) -> None:
    """(c * x) @ y  becomes  c * (x @ y); Conv2D is handled the same way."""
    for mul in list(graph.nodes):
        if mul.op_type != "Mul" or not ctx.alive(mul):
            continue
        split = const_operand(ctx, mul)
        if split is None or ctx.scalar(split[1]) is None:
            continue
        x, c_name, _ = split
        lin = sole_consumer(ctx, mul.outputs[0])
        if lin is None or lin.op_type not in LINEAR_OPS or not ctx.alive(lin):
            continue
        if lin.op_type == "Conv2D" and lin.inputs[0] != mul.outputs[0]:
            continue
        if lin.inputs.count(mul.outputs[0]) != 1:
            continue
        mid = ctx.fresh(lin.name + "_out")
        ins = [x if i == mul.outputs[0] else i for i in lin.inputs]
        ctx.replace([mul, lin], [
            Node(lin.op_type, lin.name, ins, [mid], dict(lin.attributes)),
            Node("Mul", mul.name, [mid, c_name], [lin.outputs[0]]),
        ])
        report.applied(removed=2, added=2)


def _scalar_mul_branch(ctx, tensor: str):
    """(inner tensor, scale, node) when `tensor` is an exclusive x * scalar."""
    p = ctx.producer(tensor)
    if p is None or p.op_type != "Mul" or not ctx.alive(p) or not ctx.exclusive(tensor):
        return None
    split = const_operand(ctx, p)
    if split is None or ctx.scalar(split[1]) is None:
        return None
    return split[0], ctx.scalar(split[1]), p


def _biased_branch(ctx, tensor: str) -> bool:
    p = ctx.producer(tensor)
    return p is not None and p.op_type in ("Add", "Sub") and ctx.split_const(p) is not None


@transformation("move_linear_past_eltwise_mul")
def move_linear_past_eltwise_mul(graph: Graph, report: PassReport, ctx) -> None:
    """(s1 * x) ⊙ (s2 * y)  becomes  (x ⊙ y) * (s1 * s2).

    Either side may lack the scalar Mul; a side ending in a constant Add
    blocks the rewrite.
    """
    for n in list(graph.nodes):
        if n.op_type != "Mul" or not ctx.alive(n) or ctx.split_const(n) is not None:
            continue
        if len(n.inputs) != 2 or n.inputs[0] == n.inputs[1]:
            continue
        if any(_biased_branch(ctx, t) for t in n.inputs):
            report.diag(f"{n.name}: a branch ends in a bias Add, not moved")
            continue
        sides = [_scalar_mul_branch(ctx, t) for t in n.inputs]
        if not any(sides):
            continue
        scale = 1.0
        ins, dead = [], []
        for t, side in zip(n.inputs, sides):
            if side is None:
                ins.append(t)
            else:
                ins.append(side[0])
                scale *= side[1]
                dead.append(side[2])
        c = ctx.add_const(n.name + "_scale", np.float64(scale))
        mid = ctx.fresh(n.name + "_prod")
        ctx.replace(dead + [n], [
            Node("Mul", n.name, ins, [mid]),
            Node("Mul", ctx.fresh(n.name + "_rescale"), [mid, c], [n.outputs[0]]),
        ])
        report.applied(removed=len(dead) + 1, added=2)


@transformation("move_linear_past_eltwise_add")
def move_linear_past_eltwise_add(graph: Graph, report: PassReport, ctx) -> None:
    """s1 * x + s2 * y  becomes  (k * x + y) * s2 when k = s1 / s2 is an integer."""
    for n in list(graph.nodes):
        if n.op_type != "Add" or not ctx.alive(n) or ctx.split_const(n) is not None:
            continue
        if len(n.inputs) != 2 or n.inputs[0] == n.inputs[1]:
            continue
        sides = [_scalar_mul_branch(ctx, t) for t in n.inputs]
        if not all(sides):
            continue
        (x, s1, p1), (y, s2, p2) = sides
        k = near_integer(s1 / s2)
        if k is None:
            (x, s1, p1), (y, s2, p2) = (y, s2, p2), (x, s1, p1)
            k = near_integer(s1 / s2)
        if k is None:
            report.diag(f"{n.name}: branch scales {s1:g} and {s2:g} "
                        "have no integer ratio")
            continue
        new = []
        if k != 1:
            kc = add_value_const(ctx, n.name + "_ratio", np.int64(k), both_int(ctx, x))
            xk = ctx.fresh(n.name + "_lhs")
            new.append(Node("Mul", ctx.fresh(n.name + "_align"), [x, kc], [xk]))
            x = xk
        c = ctx.add_const(n.name + "_scale", np.float64(s2))
        mid = ctx.fresh(n.name + "_sum")
        new += [Node("Add", n.name, [x, y], [mid]),
                Node("Mul", ctx.fresh(n.name + "_rescale"), [mid, c], [n.outputs[0]])]
        ctx.replace([p1, p2, n], new)
        report.applied(removed=3, added=len(new))


def _collapse(op: str, combine):
    def body(graph: Graph, report: PassReport, ctx) -> None:
        for first in list(graph.nodes):
            if first.op_type != op or not ctx.alive(first):
                continue
            split = const_operand(ctx, first)
            if split is None:
                continue
            x, a_name, a = split
            second = sole_consumer(ctx, first.outputs[0], op)
            if second is None or not ctx.alive(second):
                continue
            s2 = const_operand(ctx, second)
            if s2 is None or s2[0] != first.outputs[0]:
                continue
            _, b_name, b = s2
            merged = add_value_const(ctx, first.name + "_merged", combine(a, b),
                                     both_int(ctx, a_name, b_name))
            ctx.replace([first, second],
                        [Node(op, first.name, [x, merged], [second.outputs[0]])])
            report.applied(removed=2, added=1)
    return body


collapse_repeated_add = transformation("collapse_repeated_add")(
    _collapse("Add", lambda a, b: np.add(a, b, dtype=np.float64)))
collapse_repeated_add.__doc__ = "(x + a) + b  becomes  x + (a + b)."
collapse_repeated_mul = transformation("collapse_repeated_mul")(
    _collapse("Mul", lambda a, b: np.multiply(a, b, dtype=np.float64)))
collapse_repeated_mul.__doc__ = "(x * a) * b  becomes  x * (a * b)."


@transformation("remove_identity_ops")
def remove_identity_ops(graph: Graph, report: PassReport, ctx) -> None:
    """Drop Add(x, 0) and Mul(x, 1) when the constant does not broadcast x."""
    for n in list(graph.nodes):
        if n.op_type not in ("Add", "Mul") or not ctx.alive(n):
            continue
        split = const_operand(ctx, n)
        if split is None:
            continue
        x, _, v = split
        neutral = 0 if n.op_type == "Add" else 1
        if v.size == 0 or not np.all(v == neutral) or not keeps_shape(ctx, x, v):
            continue
        y = n.outputs[0]
        if y in graph.outputs:
            continue
        for c in ctx.consumers(y):
            c.inputs = [x if i == y else i for i in c.inputs]
        ctx.replace([n], [])
        report.applied(removed=1)


@transformation("move_scalar_mul_past_reshape")
def move_scalar_mul_past_reshape(graph: Graph, report: PassReport, ctx) -> None:
    """Reshape(x * c)  becomes  Reshape(x) * c for scalar c."""
    for mul in list(graph.nodes):
        if mul.op_type != "Mul" or not ctx.alive(mul):
            continue
        split = const_operand(ctx, mul)
        if split is None or ctx.scalar(split[1]) is None:
            continue
        x, c_name, _ = split
        rs = sole_consumer(ctx, mul.outputs[0], "Reshape")
        if rs is None or not ctx.alive(rs) or ctx.shape(x) != ctx.shape(mul.outputs[0]):
            continue
        mid = ctx.fresh(rs.name + "_out")
        ctx.replace([mul, rs], [
            Node("Reshape", rs.name, [x], [mid], dict(rs.attributes)),
            Node("Mul", mul.name, [mid, c_name], [rs.outputs[0]]),
        ])
        report.applied(removed=2, added=2)
