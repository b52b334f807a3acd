"""Shape and datatype inference, plus graph statistics."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import TypeConflict
from .ir import (FLOAT, DataType, Graph, ValueInfo, smallest_int_type,
                 topo_sort)

ELEMENTWISE = {"Add", "Sub", "Mul"}
FLOAT_ONLY = {"Tanh", "Sigmoid", "Quant", "BatchNorm", "DequantizeLinear"}


def infer_types(graph: Graph) -> Graph:
    """Copy of `graph` with value_info filled in for every produced tensor."""
    g = graph.copy()
    infer_types_inplace(g)
    return g


def matmul_accumulator(a: DataType, b: DataType, reduction: int) -> DataType:
    """Signed accumulator wide enough for a worst-case dot product."""
    amax = max(abs(a.min), abs(a.max))
    bmax = max(abs(b.min), abs(b.max))
    worst = int(reduction) * int(amax) * int(bmax)
    bits = max(2, worst.bit_length() + 1)
    if bits > 32:
        raise TypeConflict(f"accumulator needs {bits} bits (limit 32)")
    return DataType.int(bits, True)


def mt_out_dtype(levels: int, out_scale: float, out_bias: float) -> DataType:
    """INT when every output out_scale*k + out_bias is integral, else FLOAT."""
    if float(out_scale).is_integer() and float(out_bias).is_integer():
        ends = (out_bias, out_bias + out_scale * levels)
        t = smallest_int_type(min(ends), max(ends))
        if t is not None:
            return t
    return FLOAT


class _Env:
    def __init__(self, graph: Graph):
        self.graph = graph
        self.info: dict = {}
        for vi in graph.inputs:
            self.info[vi.name] = (tuple(vi.shape), vi.dtype)
        for name, t in graph.initializers.items():
            self.info[name] = (t.shape, t.dtype)

    def shape(self, name):
        return self.info[name][0]

    def dtype(self, name):
        return self.info[name][1]

    def interval(self, name):
        t = self.graph.initializers.get(name)
        if t is not None and t.dtype.is_int and t.size:
            return int(t.values.min()), int(t.values.max())
        dt = self.dtype(name)
        return dt.min, dt.max


def _broadcast(*shapes):
    try:
        return tuple(np.broadcast_shapes(*shapes))
    except ValueError as e:
        raise TypeConflict(f"incompatible shapes {shapes}") from e


def _int_from(lo, hi, what):
    t = smallest_int_type(lo, hi)
    if t is None:
        raise TypeConflict(f"{what}: range [{lo}, {hi}] exceeds 32 bits")
    return t


def _matmul_shape(a, b):
    if len(b) == 1:
        if a[-1] != b[0]:
            raise TypeConflict(f"MatMul shapes {a} x {b}")
        return a[:-1]
    if len(b) != 2 or a[-1] != b[0]:
        raise TypeConflict(f"MatMul shapes {a} x {b}")
    return a[:-1] + (b[1],)


def _conv_shape(x, w, attrs):
    if len(x) != 4 or len(w) != 4 or x[1] != w[1]:
        raise TypeConflict(f"Conv2D shapes {x} * {w}")
    sh, sw = attrs.get("strides", [1, 1])
    pt, pl, pb, pr = attrs.get("pads", [0, 0, 0, 0])
    ho = (x[2] + pt + pb - w[2]) // sh + 1
    wo = (x[3] + pl + pr - w[3]) // sw + 1
    return (x[0], w[0], ho, wo)


def reshape_target(in_shape, attrs):
    perm = attrs.get("perm")
    if perm is not None:
        in_shape = tuple(in_shape[p] for p in perm)
    target = list(attrs["shape"])
    total = int(np.prod(in_shape, dtype=np.int64))
    if -1 in target:
        known = int(np.prod([s for s in target if s != -1], dtype=np.int64))
        target[target.index(-1)] = total // known
    if int(np.prod(target, dtype=np.int64)) != total:
        raise TypeConflict(f"cannot reshape {in_shape} to {attrs['shape']}")
    return tuple(target)


def _infer_node(env: _Env, n) -> list:
    op, a = n.op_type, n.attributes
    ins = n.inputs
    if op in ELEMENTWISE:
        shape = _broadcast(env.shape(ins[0]), env.shape(ins[1]))
        da, db = env.dtype(ins[0]), env.dtype(ins[1])
        if not (da.is_int and db.is_int):
            return [(shape, FLOAT)]
        (a0, a1), (b0, b1) = env.interval(ins[0]), env.interval(ins[1])
        if op == "Add":
            lo, hi = a0 + b0, a1 + b1
        elif op == "Sub":
            lo, hi = a0 - b1, a1 - b0
        else:
            prods = [a0 * b0, a0 * b1, a1 * b0, a1 * b1]
            lo, hi = min(prods), max(prods)
        return [(shape, _int_from(lo, hi, n.name))]
    if op == "MatMul":
        sa, sb = env.shape(ins[0]), env.shape(ins[1])
        shape = _matmul_shape(sa, sb)
        da, db = env.dtype(ins[0]), env.dtype(ins[1])
        if da.is_int and db.is_int:
            return [(shape, matmul_accumulator(da, db, sa[-1]))]
        return [(shape, FLOAT)]
    if op == "Conv2D":
        sx, sw = env.shape(ins[0]), env.shape(ins[1])
        shape = _conv_shape(sx, sw, a)
        dx, dw = env.dtype(ins[0]), env.dtype(ins[1])
        if dx.is_int and dw.is_int:
            return [(shape, matmul_accumulator(dx, dw, sw[1] * sw[2] * sw[3]))]
        return [(shape, FLOAT)]
    if op == "MultiThreshold":
        return [(env.shape(ins[0]), a["out_dtype"])]
    if op == "QuantizeLinear":
        return [(env.shape(ins[0]), DataType.int(int(a["bits"]), bool(a["signed"])))]
    if op == "DequantizeLinear":
        if not env.dtype(ins[0]).is_int:
            raise TypeConflict(f"{n.name}: DequantizeLinear needs an INT input")
        return [(env.shape(ins[0]), FLOAT)]
    if op == "Clip":
        dt = env.dtype(ins[0])
        if dt.is_int:
            lo, hi = env.interval(ins[0])
            lo, hi = max(lo, a["min"]), min(hi, a["max"])
            return [(env.shape(ins[0]), _int_from(lo, hi, n.name))]
        return [(env.shape(ins[0]), FLOAT)]
    if op == "ReLU":
        dt = env.dtype(ins[0])
        if dt.is_int:
            lo, hi = env.interval(ins[0])
            return [(env.shape(ins[0]), _int_from(max(lo, 0), max(hi, 0), n.name))]
        return [(env.shape(ins[0]), FLOAT)]
    if op in FLOAT_ONLY:
        return [(env.shape(ins[0]), FLOAT)]
    if op == "Concat":
        axis = int(a.get("axis", 0))
        shapes = [env.shape(i) for i in ins]
        rank = len(shapes[0])
        axis %= rank
        out = list(shapes[0])
        out[axis] = sum(s[axis] for s in shapes)
        dts = [env.dtype(i) for i in ins]
        if all(d.is_int for d in dts):
            ivs = [env.interval(i) for i in ins]
            dt = _int_from(min(i[0] for i in ivs), max(i[1] for i in ivs), n.name)
        else:
            dt = FLOAT
        return [(tuple(out), dt)]
    if op == "Reshape":
        return [(reshape_target(env.shape(ins[0]), a), env.dtype(ins[0]))]
    if op == "Scan":
        return _infer_scan(env, n)
    raise TypeConflict(f"no type rule for op {op!r}")


def _infer_scan(env: _Env, n) -> list:
    body = n.attributes["body"]
    n_scan = int(n.attributes.get("num_scan_inputs", 1))
    n_state = len(n.inputs) - n_scan
    for i, (outer, inner) in enumerate(zip(n.inputs, body.inputs)):
        shape, dt = env.shape(outer), env.dtype(outer)
        if i >= n_state:
            shape = shape[1:]
        if dt != inner.dtype or tuple(shape) != tuple(inner.shape):
            raise TypeConflict(
                f"{n.name}: input {outer!r} is {dt}{list(shape)} but body "
                f"expects {inner.dtype}{list(inner.shape)}")
    infer_types_inplace(body)
    steps = env.shape(n.inputs[n_state])[0] if n_scan else 1
    results = []
    for j, out in enumerate(body.outputs):
        shape, dt = body.shape_of(out), body.dtype_of(out)
        if j < n_state:
            state = body.inputs[j]
            if dt != state.dtype or tuple(shape) != tuple(state.shape):
                raise TypeConflict(
                    f"{n.name}: state {state.name!r} enters as {state.dtype} "
                    f"but leaves as {dt}")
            results.append((shape, dt))
        else:
            results.append(((steps,) + tuple(shape), dt))
    return results


def infer_types_inplace(graph: Graph) -> None:
    env = _Env(graph)
    graph.value_info = {}
    for n in topo_sort(graph):
        for i in n.inputs:
            if i not in env.info:
                raise TypeConflict(f"{n.name}: input {i!r} has unknown type")
        for out, (shape, dt) in zip(n.outputs, _infer_node(env, n)):
            env.info[out] = (tuple(int(s) for s in shape), dt)
            graph.value_info[out] = ValueInfo(out, shape, dt)


# ---------------------------------------------------------------------------
# statistics

@dataclass
class GraphStats:
    op_counts: dict = field(default_factory=dict)
    node_count: int = 0
    float_tensor_count: int = 0
    float_op_count: int = 0
    param_count: int = 0
    bodies: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"op_counts": dict(sorted(self.op_counts.items())),
                "node_count": self.node_count,
                "float_tensor_count": self.float_tensor_count,
                "float_op_count": self.float_op_count,
                "param_count": self.param_count,
                "bodies": {k: v.to_dict() for k, v in self.bodies.items()}}


def stats(graph: Graph) -> GraphStats:
    """Op histogram, FLOAT tensor/op counts and parameter count.

    Totals include Scan bodies; each body is also reported under `bodies`.
    """
    g = infer_types(graph)
    return _stats(g)


def _stats(g: Graph) -> GraphStats:
    s = GraphStats()
    s.param_count = sum(t.size for t in g.initializers.values())
    for n in g.nodes:
        s.op_counts[n.op_type] = s.op_counts.get(n.op_type, 0) + 1
        s.node_count += 1
        dts = [g.dtype_of(t) for t in list(n.inputs) + list(n.outputs)]
        if any(d is not None and not d.is_int for d in dts):
            s.float_op_count += 1
        s.float_tensor_count += sum(
            1 for o in n.outputs if not g.dtype_of(o).is_int)
        if n.body is not None:
            sub = _stats(n.body)
            s.bodies[n.name] = sub
            for op, c in sub.op_counts.items():
                s.op_counts[op] = s.op_counts.get(op, 0) + c
            s.node_count += sub.node_count
            s.float_op_count += sub.float_op_count
            s.float_tensor_count += sub.float_tensor_count
            s.param_count += sub.param_count
    return s
