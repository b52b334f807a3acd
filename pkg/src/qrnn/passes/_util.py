"""Small helpers shared by the rewrite passes."""

from __future__ import annotations

import numpy as np

from ..ir import FLOAT, Node, smallest_int_type


def const_operand(ctx, node: Node):
    """(dynamic input, constant name, constant value) for a binary op, else None."""
    split = ctx.split_const(node)
    if split is None:
        return None
    dyn, cname = split
    return dyn, cname, ctx.const(cname)


def sole_consumer(ctx, tensor: str, op_type: str | None = None) -> Node | None:
    if not ctx.exclusive(tensor):
        return None
    (n,) = ctx.consumers(tensor)
    if op_type is not None and n.op_type != op_type:
        return None
    return n


def keeps_shape(ctx, dyn: str, value: np.ndarray) -> bool:
    """True when broadcasting the constant does not enlarge `dyn`."""
    shape = ctx.shape(dyn)
    if shape is None:
        return False
    try:
        return tuple(np.broadcast_shapes(shape, np.shape(value))) == tuple(shape)
    except ValueError:
        return False


def is_integral(value) -> bool:
    v = np.asarray(value, dtype=np.float64)
    return bool(np.all(np.isfinite(v)) and np.all(v == np.round(v)))


def near_integer(r: float, rel: float = 1e-9) -> int | None:
    k = round(r)
    if k != 0 and abs(r - k) <= rel * abs(k):
        return int(k)
    return None


def add_value_const(ctx, stem: str, value, int_ok: bool) -> str:
    """Register a constant, typed INT when allowed and the values are integral."""
    value = np.asarray(value, dtype=np.float64)
    if int_ok and is_integral(value):
        lo, hi = (value.min(), value.max()) if value.size else (0, 0)
        dt = smallest_int_type(lo, hi)
        if dt is not None:
            return ctx.add_const(stem, value.astype(np.int64), dt)
    return ctx.add_const(stem, value, FLOAT)


def both_int(ctx, *tensors) -> bool:
    return all(ctx.dtype(t) is not None and ctx.dtype(t).is_int for t in tensors)
