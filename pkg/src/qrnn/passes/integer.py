"""Threshold rounding and moving dequantization scales across Scan boundaries."""

from __future__ import annotations

import numpy as np

from ..ir import Graph, Node, Tensor, ValueInfo
from ..rewrite import PassReport, transformation
from ..thresholds import MultiThresholdAttrs
from ._util import is_integral


@transformation("round_and_clip_thresholds")
def round_and_clip_thresholds(graph: Graph, report: PassReport, ctx) -> None:
    """Integer thresholds for INT inputs: ceil, then clamp to [min, max + 1]."""
    for mt in list(graph.nodes):
        if mt.op_type != "MultiThreshold":
            continue
        dt = ctx.dtype(mt.inputs[0])
        if dt is None or not dt.is_int:
            continue
        attrs = MultiThresholdAttrs.from_attrs(mt.attributes)
        t = np.clip(np.ceil(attrs.thresholds), dt.min, dt.max + 1)
        if np.array_equal(t, attrs.thresholds):
            continue
        mt.attributes = MultiThresholdAttrs(t, attrs.out_scale, attrs.out_bias,
                                            attrs.out_dtype, attrs.channel_axis).to_attrs()
        ctx.touched()
        report.applied()


def _dequant_source(body: Graph, tensor: str):
    """(codes tensor, scale, Mul node) when `tensor` = MT codes * scalar."""
    mul = next((n for n in body.nodes if tensor in n.outputs), None)
    if mul is None or mul.op_type != "Mul" or len(mul.inputs) != 2:
        return None
    a, b = mul.inputs
    if b not in body.initializers:
        a, b = b, a
    if b not in body.initializers or a in body.initializers:
        return None
    c = body.initializers[b].values
    if c.size != 1 or float(c.reshape(())) == 0:
        return None
    src = next((n for n in body.nodes if a in n.outputs), None)
    if src is None or src.op_type != "MultiThreshold" or not src.attributes["out_dtype"].is_int:
        return None
    return a, float(c.reshape(())), mul


def _rescale_outer(graph: Graph, ctx, scan: Node, slots: list, scale: float) -> None:
    """Give each used Scan output in `slots` a trailing Mul(scale)."""
    consumers = ctx.consumers
    for k in slots:
        out = scan.outputs[k]
        if not consumers(out) and out not in graph.outputs:
            continue
        raw = ctx.fresh(out + "_codes")
        scan.outputs[k] = raw
        c = ctx.add_const(scan.name + "_out_scale", np.float64(scale))
        ctx.insert([Node("Mul", ctx.fresh(out + "_dequant"), [raw, c], [out])])


@transformation("move_scale_out_of_scan")
def move_scale_out_of_scan(graph: Graph, report: PassReport, ctx) -> None:
    """Carry integer codes through Scan states and outputs instead of values.

    A body output produced as MT codes * s is replaced by the codes. The
    matching state input receives codes too and re-applies s for each of
    its consumers inside the body; the outer initial state is divided by s,
    and outer consumers see the scale restored after the Scan.
    """
    for scan in list(graph.nodes):
        if scan.op_type != "Scan":
            continue
        body = scan.body
        n_scan = int(scan.attributes.get("num_scan_inputs", 1))
        n_state = len(scan.inputs) - n_scan
        for out_t in list(body.outputs):
            ctx.dtype(scan.outputs[0])
            src = _dequant_source(body, out_t)
            if src is None:
                continue
            codes, scale, mul = src
            slots = [k for k, o in enumerate(body.outputs) if o == out_t]
            states = [k for k in slots if k < n_state]
            new_inits = {}
            ok = True
            for k in states:
                init = graph.initializers.get(scan.inputs[k])
                if init is None:
                    ok = False
                    break
                v = np.asarray(init.values, dtype=np.float64) / scale
                dt = body.dtype_of(codes)
                if dt is None or not is_integral(v) or (v.size and (
                        v.min() < dt.min or v.max() > dt.max)):
                    ok = False
                    break
                new_inits[k] = Tensor(v.astype(np.int64), dt)
            if not ok:
                report.diag(f"{scan.name}: initial state for {out_t!r} is not on the "
                            "code grid, scale kept inside the body")
                continue
            dt = body.dtype_of(codes)
            body.outputs = [codes if o == out_t else o for o in body.outputs]
            internal = [n for n in body.nodes if out_t in n.inputs]
            if not internal and out_t not in body.outputs:
                body.nodes = [n for n in body.nodes if n is not mul]
            for k in states:
                vi = body.inputs[k]
                body.inputs[k] = ValueInfo(vi.name, vi.shape, dt)
                _split_state_input(body, vi.name, scale)
                name = ctx.add_const(scan.name + "_init", new_inits[k].values, dt)
                scan.inputs[k] = name
            _rescale_outer(graph, ctx, scan, slots, scale)
            body.value_info = {}
            ctx.touched()
            report.applied(removed=0, added=len(slots))


def _split_state_input(body: Graph, name: str, scale: float) -> None:
    """Insert a private Mul(scale) in front of every consumer of `name`."""
    taken = body.tensor_names() | {n.name for n in body.nodes}
    c = body.fresh_name(name + "_scale", taken)
    body.initializers[c] = Tensor(np.float64(scale))
    new_nodes = []
    for n in body.nodes:
        if name in n.inputs:
            t = body.fresh_name(name + "_deq", taken)
            new_nodes.append(Node("Mul", body.fresh_name(name + "_deq_mul", taken),
                                  [name, c], [t]))
            n.inputs = [t if i == name else i for i in n.inputs]
        new_nodes.append(n)
    if name in body.outputs:
        t = body.fresh_name(name + "_deq", taken)
        new_nodes.append(Node("Mul", body.fresh_name(name + "_deq_mul", taken),
                              [name, c], [t]))
        body.outputs = [t if o == name else o for o in body.outputs]
    body.nodes = new_nodes


@transformation("move_scale_into_scan")
def move_scale_into_scan(graph: Graph, report: PassReport, ctx) -> None:
    """Feed INT codes to a Scan instead of codes * s; the body re-applies s."""
    for scan in list(graph.nodes):
        if scan.op_type != "Scan":
            continue
        body = scan.body
        n_scan = int(scan.attributes.get("num_scan_inputs", 1))
        n_state = len(scan.inputs) - n_scan
        for k in range(n_state, len(scan.inputs)):
            seq = scan.inputs[k]
            mul = ctx.producer(seq)
            if mul is None or mul.op_type != "Mul" or not ctx.exclusive(seq):
                continue
            split = ctx.split_const(mul)
            if split is None or ctx.scalar(split[1]) is None:
                continue
            codes, c_name = split
            dt = ctx.dtype(codes)
            if dt is None or not dt.is_int or ctx.shape(codes) != ctx.shape(seq):
                continue
            scale = ctx.scalar(c_name)
            vi = body.inputs[k]
            body.inputs[k] = ValueInfo(vi.name, vi.shape, dt)
            _split_state_input(body, vi.name, scale)
            body.value_info = {}
            scan.inputs[k] = codes
            ctx.replace([mul], [])
            report.applied(removed=1, added=1)
