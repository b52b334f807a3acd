"""Reference interpreter for graphs, including the Scan recurrence."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (BodySignatureMismatch, IntegerOverflow, MissingFeed,
                     ShapeMismatch, StepBudgetExceeded, UnsupportedOp)
from .inference import infer_types, reshape_target
from .ir import Graph, Node, Tensor, ValueInfo, iter_graphs, topo_sort
from .quant import QuantParams, quant_fused
from .thresholds import MultiThresholdAttrs, multithreshold

DEFAULT_STEP_BUDGET = 10_000_000


@dataclass
class ExecutionContext:
    """Per-run state. Contexts never share mutable data."""
    env: dict = field(default_factory=dict)
    trace: bool = False
    step_budget: int = DEFAULT_STEP_BUDGET
    steps: int = 0
    records: list = field(default_factory=list)
    _order: dict = field(default_factory=dict)

    def tick(self) -> None:
        self.steps += 1
        if self.steps > self.step_budget:
            raise StepBudgetExceeded(f"more than {self.step_budget} node evaluations")

    def order(self, graph: Graph) -> list:
        key = id(graph)
        if key not in self._order:
            self._order[key] = topo_sort(graph)
        return self._order[key]


@dataclass
class ScanState:
    states: list
    iteration: int = 0
    stacked: list = field(default_factory=list)


def _is_typed(graph: Graph) -> bool:
    for g in iter_graphs(graph):
        for n in g.nodes:
            if any(o not in g.value_info for o in n.outputs):
                return False
    return True


def prepare(graph: Graph) -> Graph:
    """`graph` itself if already type-inferred, else an inferred copy."""
    return graph if _is_typed(graph) else infer_types(graph)


def _as_array(v) -> np.ndarray:
    return v.values if isinstance(v, Tensor) else np.asarray(v)


def _bind_feeds(graph: Graph, feeds: dict) -> dict:
    env = {}
    for vi in graph.inputs:
        if vi.name not in feeds:
            raise MissingFeed(f"no feed for graph input {vi.name!r}")
        arr = _as_array(feeds[vi.name])
        if tuple(arr.shape) != tuple(vi.shape):
            raise ShapeMismatch(
                f"feed {vi.name!r} has shape {tuple(arr.shape)}, expected {tuple(vi.shape)}")
        if vi.dtype.is_int:
            if arr.size and (np.any(arr != np.round(arr)) or arr.min() < vi.dtype.min
                             or arr.max() > vi.dtype.max):
                raise ShapeMismatch(f"feed {vi.name!r} is not a valid {vi.dtype} tensor")
            env[vi.name] = arr.astype(np.int64)
        else:
            env[vi.name] = arr.astype(np.float64)
    return env


def execute(graph: Graph, feeds: dict, *, trace: bool = False,
            step_budget: int = DEFAULT_STEP_BUDGET, context: ExecutionContext | None = None
            ) -> dict:
    """Evaluate `graph` on `feeds`; returns {output name: Tensor}.

    Pass a `context` to inspect the trace afterwards (set trace=True on it).
    """
    g = prepare(graph)
    ctx = context or ExecutionContext(trace=trace, step_budget=step_budget)
    ctx.env = _bind_feeds(g, feeds)
    values = _run(g, ctx.env, ctx, "")
    return {name: Tensor(v, g.dtype_of(name)) for name, v in zip(g.outputs, values)}


def _run(graph: Graph, env: dict, ctx: ExecutionContext, path: str) -> list:
    for name, t in graph.initializers.items():
        env.setdefault(name, t.values)
    for n in ctx.order(graph):
        ctx.tick()
        args = []
        for i in n.inputs:
            if i not in env:
                raise MissingFeed(f"{path}{n.name}: input {i!r} is unbound")
            args.append(env[i])
        outs = _eval(n, args, ctx, path)
        for name, v in zip(n.outputs, outs):
            env[name] = _coerce(graph, n, name, v)
        if ctx.trace:
            ctx.records.append((path + n.name, {o: Tensor(env[o], graph.dtype_of(o))
                                                for o in n.outputs}))
    return [env[o] for o in graph.outputs]


def _coerce(graph: Graph, node: Node, name: str, v) -> np.ndarray:
    dt = graph.dtype_of(name)
    v = np.asarray(v)
    if dt is None or not dt.is_int:
        return v.astype(np.float64)
    if v.dtype.kind == "f":
        if not np.all(v == np.round(v)):
            raise IntegerOverflow(f"{node.name}: non-integral value for {dt} tensor {name!r}")
    if v.size and (v.min() < dt.min or v.max() > dt.max):
        raise IntegerOverflow(
            f"{node.name}: {name!r} holds [{v.min()}, {v.max()}] outside {dt}")
    return v.astype(np.int64)


def _int_or_float(*arrays) -> list:
    if all(a.dtype.kind in "iu" for a in arrays):
        return [a.astype(np.int64) for a in arrays]
    return [a.astype(np.float64) for a in arrays]


def conv2d(x: np.ndarray, w: np.ndarray, strides=(1, 1), pads=(0, 0, 0, 0)) -> np.ndarray:
    """Direct NCHW convolution (cross-correlation), one kernel tap at a time."""
    x, w = _int_or_float(x, w)
    sh, sw = strides
    pt, pl, pb, pr = pads
    n, c, h, wd = x.shape
    o, c2, kh, kw = w.shape
    if c != c2:
        raise ShapeMismatch(f"Conv2D channels {c} vs kernel {c2}")
    xp = np.pad(x, ((0, 0), (0, 0), (pt, pb), (pl, pr)))
    ho = (h + pt + pb - kh) // sh + 1
    wo = (wd + pl + pr - kw) // sw + 1
    out = np.zeros((n, o, ho, wo), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            patch = xp[:, :, i:i + sh * (ho - 1) + 1:sh, j:j + sw * (wo - 1) + 1:sw]
            out += np.einsum("nchw,oc->nohw", patch, w[:, :, i, j])
    return out


def batchnorm(x, gamma, beta, mean, var, epsilon: float) -> np.ndarray:
    """Per-channel (axis 1) affine map y = x*s + (beta - mean*s), s = gamma/sqrt(var+eps)."""
    s = np.asarray(gamma, np.float64) / np.sqrt(np.asarray(var, np.float64) + epsilon)
    b = np.asarray(beta, np.float64) - np.asarray(mean, np.float64) * s
    x = np.asarray(x, np.float64)
    shape = (1, -1) + (1,) * (x.ndim - 2) if x.ndim >= 2 else (-1,)
    return x * s.reshape(shape) + b.reshape(shape)


def _eval(n: Node, args: list, ctx: ExecutionContext, path: str) -> list:
    op, a = n.op_type, n.attributes
    if op in ("Add", "Sub", "Mul"):
        x, y = _int_or_float(*args)
        return [x + y if op == "Add" else x - y if op == "Sub" else x * y]
    if op == "MatMul":
        x, y = _int_or_float(*args)
        return [x @ y]
    if op == "Conv2D":
        return [conv2d(args[0], args[1], a.get("strides", (1, 1)),
                       a.get("pads", (0, 0, 0, 0)))]
    if op == "Tanh":
        return [np.tanh(args[0].astype(np.float64))]
    if op == "Sigmoid":
        return [1.0 / (1.0 + np.exp(-args[0].astype(np.float64)))]
    if op == "ReLU":
        return [np.maximum(args[0], 0)]
    if op == "BatchNorm":
        return [batchnorm(*args[:5], float(a.get("epsilon", 1e-5)))]
    if op == "QuantizeLinear":
        x = args[0].astype(np.float64)
        bits, signed = int(a["bits"]), bool(a.get("signed", True))
        lo, hi = (-(2 ** (bits - 1)), 2 ** (bits - 1) - 1) if signed else (0, 2 ** bits - 1)
        return [np.clip(np.round(x / a["scale"]) + a.get("zero_point", 0), lo, hi)]
    if op == "Clip":
        return [np.clip(args[0], a["min"], a["max"])]
    if op == "DequantizeLinear":
        q = args[0].astype(np.int64)
        return [(q - a.get("zero_point", 0)) * float(a["scale"])]
    if op == "Quant":
        return [quant_fused(args[0], QuantParams.from_attrs(a))]
    if op == "MultiThreshold":
        return [multithreshold(args[0], MultiThresholdAttrs.from_attrs(a))]
    if op == "Concat":
        return [np.concatenate(_int_or_float(*args), axis=int(a.get("axis", 0)))]
    if op == "Reshape":
        x = args[0]
        if a.get("perm") is not None:
            x = np.transpose(x, a["perm"])
        return [x.reshape(reshape_target(x.shape, {"shape": a["shape"]}))]
    if op == "Scan":
        states, stacked = _scan(n, args, ctx, path)
        return list(states) + list(stacked)
    raise UnsupportedOp(f"{n.name}: no semantics for op {op!r}")


def _scan(node: Node, args: list, ctx: ExecutionContext, path: str):
    body = node.body
    n_scan = int(node.attributes.get("num_scan_inputs", 1))
    n_state = len(args) - n_scan
    if len(body.inputs) != len(args) or len(body.outputs) < n_state:
        raise BodySignatureMismatch(
            f"{node.name}: body takes {len(body.inputs)} inputs for {len(args)} Scan inputs")
    seqs = args[n_state:]
    if any(np.ndim(s) == 0 for s in seqs):
        raise BodySignatureMismatch(f"{node.name}: scan inputs need a sequence axis")
    steps = seqs[0].shape[0] if seqs else 1
    if any(s.shape[0] != steps for s in seqs):
        raise BodySignatureMismatch(f"{node.name}: scan inputs differ in length")
    st = ScanState(list(args[:n_state]),
                   stacked=[[] for _ in range(len(body.outputs) - n_state)])
    for t in range(steps):
        st.iteration = t
        env = {vi.name: v for vi, v in zip(body.inputs, st.states + [s[t] for s in seqs])}
        outs = _run(body, env, ctx, f"{path}{node.name}[{t}]/")
        new_states = outs[:n_state]
        for old, new in zip(st.states, new_states):
            if np.shape(old) != np.shape(new):
                raise BodySignatureMismatch(
                    f"{node.name}: state shape changed from {np.shape(old)} to {np.shape(new)}")
        st.states = new_states
        for acc, v in zip(st.stacked, outs[n_state:]):
            acc.append(v)
    stacked = [np.stack(acc) if acc else np.zeros((0,)) for acc in st.stacked]
    return st.states, stacked


def execute_scan(node: Node, feeds, *, step_budget: int = DEFAULT_STEP_BUDGET):
    """Run one Scan node on explicit inputs.

    `feeds` is a list ordered like ``node.inputs`` or a dict keyed by those
    names. Returns (final states, stacked outputs) as lists of arrays.
    """
    if isinstance(feeds, dict):
        missing = [i for i in node.inputs if i not in feeds]
        if missing:
            raise MissingFeed(f"no feed for Scan input(s) {missing}")
        feeds = [feeds[i] for i in node.inputs]
    node = Node(node.op_type, node.name, list(node.inputs), list(node.outputs),
                dict(node.attributes, body=prepare(node.body)))
    body = node.body
    if len(feeds) != len(body.inputs):
        raise BodySignatureMismatch(
            f"{node.name}: {len(feeds)} feeds for a body with {len(body.inputs)} inputs")
    args = []
    for vi, v in zip(body.inputs, feeds):
        arr = _as_array(v)
        args.append(arr.astype(np.int64) if vi.dtype.is_int else arr.astype(np.float64))
    ctx = ExecutionContext(step_budget=step_budget)
    return _scan(node, args, ctx, "")


# ---------------------------------------------------------------------------
# standalone oracles

def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def reference_lstm_float(weights, x_seq) -> np.ndarray:
    """Textbook LSTM recurrence with h0 = C0 = 0; returns the stacked h_t."""
    x_seq = np.asarray(x_seq, dtype=np.float64)
    H, I = weights.hidden_size, weights.input_size
    if x_seq.ndim != 2 or x_seq.shape[1] != I:
        raise ShapeMismatch(f"x_seq has shape {x_seq.shape}, expected (T, {I})")
    h = np.zeros(H)
    c = np.zeros(H)
    out = []
    for x in x_seq:
        f = _sigmoid(weights.W_f @ x + weights.U_f @ h + weights.b_f)
        i = _sigmoid(weights.W_i @ x + weights.U_i @ h + weights.b_i)
        g = np.tanh(weights.W_c @ x + weights.U_c @ h + weights.b_c)
        o = _sigmoid(weights.W_o @ x + weights.U_o @ h + weights.b_o)
        c = f * c + i * g
        h = o * np.tanh(c)
        out.append(h)
    return np.array(out).reshape(len(out), H)


def reference_quantized_lstm(config, weights, x_seq) -> np.ndarray:
    """Plain loop applying the 11 quantizers in the order the built graph does.

    `x_seq` holds input codes when the config has an input quantizer. The
    arithmetic mirrors the graph op for op, so results agree bit for bit.
    """
    from .builder import GATES, _weight_codes
    from .errors import ConfigError
    weights.check(config.input_size, config.hidden_size)
    x_seq = np.asarray(x_seq)
    if x_seq.shape != (config.seq_len, config.input_size):
        raise ConfigError(f"x_seq has shape {x_seq.shape}, expected "
                          f"{(config.seq_len, config.input_size)}")
    q = config.act_qps
    wq = {}
    for g in GATES:
        wc, ws = _weight_codes(weights, "W_" + g, config.weight_qp)
        uc, us = _weight_codes(weights, "U_" + g, config.weight_qp)
        wq[g] = (wc.T.astype(np.float64), ws, uc.T.astype(np.float64), us)
    H = config.hidden_size
    h = np.zeros(H)
    c = np.zeros(H)
    out = []
    for x in x_seq:
        if config.input_qp is not None:
            x = x.astype(np.int64) * np.float64(config.input_qp.scale)
        else:
            x = x.astype(np.float64)
        gate = {}
        for g in GATES:
            wt, ws, ut, us = wq[g]
            z = ((x @ wt) * ws + (h @ ut) * us) + weights.b(g)
            z = quant_fused(z, q["acc_" + g])
            if g == "c":
                gate[g] = quant_fused(np.tanh(z), q["tanh_c"])
            else:
                gate[g] = quant_fused(_sigmoid(z), q["sig_" + g])
        c = quant_fused(gate["f"] * c + gate["i"] * gate["c"], q["cell_state"])
        ct = quant_fused(np.tanh(c), q["cell_tanh"])
        h = quant_fused(gate["o"] * ct, q["hidden_state"])
        out.append(h)
    return np.array(out).reshape(len(out), H)


def unroll_scan(graph: Graph) -> Graph:
    """Replace every top-level Scan by explicit per-step copies of its body.

    Scan inputs must be graph inputs; each is split into per-step inputs
    named ``<input>__t<k>`` (use :func:`split_sequence_feeds`). Stacked
    outputs are rebuilt with Reshape + Concat.
    """
    g = prepare(graph).copy()
    new_nodes, new_inputs = [], list(g.inputs)
    for n in g.nodes:
        if n.op_type != "Scan":
            new_nodes.append(n)
            continue
        body = n.body
        n_scan = int(n.attributes.get("num_scan_inputs", 1))
        n_state = len(n.inputs) - n_scan
        seq_names = n.inputs[n_state:]
        infos = [g.input_info(s) for s in seq_names]
        if any(vi is None for vi in infos):
            raise UnsupportedOp(f"{n.name}: scan inputs must be graph inputs to unroll")
        steps = infos[0].shape[0]
        for vi in infos:
            new_inputs.remove(vi)
        states = list(n.inputs[:n_state])
        per_step = [[] for _ in range(len(body.outputs) - n_state)]
        for t in range(steps):
            tag = f"{n.name}__t{t}"
            rename = {}
            for vi, outer in zip(body.inputs, states + [f"{s}__t{t}" for s in seq_names]):
                rename[vi.name] = outer
            for k, init in body.initializers.items():
                name = f"{tag}/{k}"
                g.initializers[name] = init
                rename[k] = name
            for bn in body.nodes:
                for o in bn.outputs:
                    rename[o] = f"{tag}/{o}"
                new_nodes.append(Node(bn.op_type, f"{tag}/{bn.name}",
                                      [rename[i] for i in bn.inputs],
                                      [rename[o] for o in bn.outputs],
                                      dict(bn.attributes)))
            outs = [rename[o] for o in body.outputs]
            states = outs[:n_state]
            for acc, o in zip(per_step, outs[n_state:]):
                acc.append(o)
        for s, vi in zip(seq_names, infos):
            for t in range(steps):
                new_inputs.append(ValueInfo(f"{s}__t{t}", tuple(vi.shape[1:]), vi.dtype))
        for k in range(n_state):
            # a shape-preserving Reshape stands in for an identity op
            shape = list(body.shape_of(body.outputs[k]))
            new_nodes.append(Node("Reshape", f"{n.name}_final_{k}", [states[k]],
                                  [n.outputs[k]], {"shape": shape}))
        for j, acc in enumerate(per_step):
            shape = body.shape_of(body.outputs[n_state + j])
            rows = []
            for t, o in enumerate(acc):
                r = f"{n.name}__row{j}_{t}"
                new_nodes.append(Node("Reshape", r + "_reshape", [o], [r],
                                      {"shape": [1] + list(shape)}))
                rows.append(r)
            new_nodes.append(Node("Concat", f"{n.name}_stack_{j}", rows,
                                  [n.outputs[n_state + j]], {"axis": 0}))
    g.nodes = new_nodes
    g.inputs = new_inputs
    g.value_info = {}
    return infer_types(g)


def split_sequence_feeds(graph: Graph, feeds: dict) -> dict:
    """Feeds for :func:`unroll_scan` output: sequences split along axis 0."""
    out = dict(feeds)
    for n in graph.nodes:
        if n.op_type != "Scan":
            continue
        n_scan = int(n.attributes.get("num_scan_inputs", 1))
        for s in n.inputs[len(n.inputs) - n_scan:]:
            arr = _as_array(out.pop(s))
            for t in range(arr.shape[0]):
                out[f"{s}__t{t}"] = arr[t]
    return out
