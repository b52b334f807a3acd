"""Dataflow graph representation, validation and rewrite primitives.

Graphs are plain dataclasses. All functions in this module treat them as
immutable: rewrites return fresh copies (see :func:`replace_chain`).
"""

from __future__ import annotations

import copy
import heapq
import math
from dataclasses import dataclass, field
from typing import Callable, Iterator, Sequence, Union

import numpy as np

from .errors import CycleDetected, RewireMismatch

SUPPORTED_OPS = frozenset({
    "QuantizeLinear", "Clip", "DequantizeLinear", "Quant", "MultiThreshold",
    "MatMul", "Add", "Mul", "Sub", "Tanh", "Sigmoid", "ReLU", "Conv2D",
    "BatchNorm", "Scan", "Concat", "Reshape",
})


@dataclass(frozen=True)
class DataType:
    kind: str
    bits: int | None = None
    signed: bool = False

    def __post_init__(self):
        if self.kind not in ("INT", "FLOAT"):
            raise ValueError(f"unknown dtype kind {self.kind!r}")
        if self.kind == "INT":
            if self.bits is None or not 1 <= self.bits <= 32:
                raise ValueError(f"INT bits must be in 1..32, got {self.bits}")
        else:
            object.__setattr__(self, "bits", None)
            object.__setattr__(self, "signed", True)

    @classmethod
    def int(cls, bits: int, signed: bool = True) -> "DataType":
        return cls("INT", bits, signed)

    @property
    def is_int(self) -> bool:
        return self.kind == "INT"

    @property
    def min(self):
        if not self.is_int:
            return -math.inf
        return -(2 ** (self.bits - 1)) if self.signed else 0

    @property
    def max(self):
        if not self.is_int:
            return math.inf
        return 2 ** (self.bits - 1) - 1 if self.signed else 2 ** self.bits - 1

    def contains(self, lo, hi) -> bool:
        return self.min <= lo and hi <= self.max

    def __str__(self):
        if not self.is_int:
            return "FLOAT"
        return f"{'' if self.signed else 'U'}INT{self.bits}"


FLOAT = DataType("FLOAT")


def smallest_int_type(lo, hi) -> DataType | None:
    """Narrowest INT type holding [lo, hi], or None if wider than 32 bits."""
    lo, hi = int(math.floor(lo)), int(math.ceil(hi))
    if lo >= 0:
        bits = max(1, int(hi).bit_length())
        return DataType.int(bits, False) if bits <= 32 else None
    bits = 1
    while not (-(2 ** (bits - 1)) <= lo and hi <= 2 ** (bits - 1) - 1):
        bits += 1
    return DataType.int(bits, True) if bits <= 32 else None


class Tensor:
    """A constant or runtime tensor: numpy values plus a declared dtype."""

    __slots__ = ("values", "dtype")

    def __init__(self, values, dtype: DataType = FLOAT):
        arr = np.asarray(values)
        if dtype.is_int:
            if arr.dtype.kind == "f":
                if not np.all(np.isfinite(arr)) or np.any(arr != np.round(arr)):
                    raise ValueError("INT tensor holds non-integer values")
            arr = arr.astype(np.int64)
            if arr.size and (arr.min() < dtype.min or arr.max() > dtype.max):
                raise ValueError(f"values outside the {dtype} range")
        else:
            arr = arr.astype(np.float64)
        self.values = arr
        self.dtype = dtype

    @classmethod
    def from_flat(cls, shape, dtype: DataType, values) -> "Tensor":
        shape = tuple(int(s) for s in shape)
        flat = np.asarray(values, dtype=np.float64 if not dtype.is_int else None)
        if flat.size != int(np.prod(shape, dtype=np.int64)):
            raise ValueError(
                f"{flat.size} values do not fill shape {list(shape)}")
        return cls(flat.reshape(shape), dtype)

    @property
    def shape(self) -> tuple:
        return tuple(self.values.shape)

    @property
    def size(self) -> int:
        return int(self.values.size)

    def __eq__(self, other):
        if not isinstance(other, Tensor):
            return NotImplemented
        return (self.dtype == other.dtype and self.shape == other.shape
                and np.array_equal(self.values, other.values))

    def __repr__(self):
        return f"Tensor({self.dtype}, shape={list(self.shape)})"


@dataclass
class ValueInfo:
    name: str
    shape: tuple
    dtype: DataType

    def __post_init__(self):
        self.shape = tuple(int(s) for s in self.shape)


def _attr_equal(a, b) -> bool:
    if isinstance(a, np.ndarray) or isinstance(b, np.ndarray):
        return (isinstance(a, np.ndarray) and isinstance(b, np.ndarray)
                and a.shape == b.shape and np.array_equal(a, b))
    if isinstance(a, (list, tuple)) and isinstance(b, (list, tuple)):
        return len(a) == len(b) and all(_attr_equal(x, y) for x, y in zip(a, b))
    return type(a) is type(b) and a == b


@dataclass(eq=False)
class Node:
    op_type: str
    name: str
    inputs: list
    outputs: list
    attributes: dict = field(default_factory=dict)

    def __eq__(self, other):
        if not isinstance(other, Node):
            return NotImplemented
        if (self.op_type, self.name, list(self.inputs), list(self.outputs)) != (
                other.op_type, other.name, list(other.inputs), list(other.outputs)):
            return False
        if self.attributes.keys() != other.attributes.keys():
            return False
        return all(_attr_equal(v, other.attributes[k])
                   for k, v in self.attributes.items())

    @property
    def body(self) -> "Graph | None":
        return self.attributes.get("body")


@dataclass
class Graph:
    name: str = "graph"
    inputs: list = field(default_factory=list)
    outputs: list = field(default_factory=list)
    initializers: dict = field(default_factory=dict)
    nodes: list = field(default_factory=list)
    value_info: dict = field(default_factory=dict)

    def copy(self) -> "Graph":
        return copy.deepcopy(self)

    @property
    def input_names(self) -> list:
        return [vi.name for vi in self.inputs]

    def input_info(self, name: str) -> ValueInfo | None:
        for vi in self.inputs:
            if vi.name == name:
                return vi
        return None

    def node(self, name: str) -> Node:
        for n in self.nodes:
            if n.name == name:
                return n
        raise KeyError(name)

    def producers(self) -> dict:
        return {out: n for n in self.nodes for out in n.outputs}

    def consumers(self) -> dict:
        cons: dict = {}
        for n in self.nodes:
            for inp in n.inputs:
                lst = cons.setdefault(inp, [])
                if not any(x is n for x in lst):
                    lst.append(n)
        return cons

    def tensor_names(self) -> set:
        names = set(self.input_names) | set(self.initializers) | set(self.outputs)
        for n in self.nodes:
            names.update(n.inputs)
            names.update(n.outputs)
        return names

    def fresh_name(self, stem: str, taken: set | None = None) -> str:
        taken = taken if taken is not None else (
            self.tensor_names() | {n.name for n in self.nodes})
        if stem not in taken:
            taken.add(stem)
            return stem
        i = 1
        while f"{stem}_{i}" in taken:
            i += 1
        taken.add(f"{stem}_{i}")
        return f"{stem}_{i}"

    def dtype_of(self, name: str) -> DataType | None:
        if name in self.initializers:
            return self.initializers[name].dtype
        vi = self.input_info(name) or self.value_info.get(name)
        return vi.dtype if vi is not None else None

    def shape_of(self, name: str) -> tuple | None:
        if name in self.initializers:
            return self.initializers[name].shape
        vi = self.input_info(name) or self.value_info.get(name)
        return vi.shape if vi is not None else None


def iter_graphs(graph: Graph) -> Iterator[Graph]:
    """Yield `graph` and every nested Scan body, depth first."""
    yield graph
    for n in graph.nodes:
        if n.body is not None:
            yield from iter_graphs(n.body)


# ---------------------------------------------------------------------------
# validation

@dataclass(frozen=True)
class Violation:
    kind: str
    subject: str
    message: str


def validate(graph: Graph) -> list:
    """Return every invariant violation in `graph` (empty list when valid)."""
    out: list = []
    _validate_into(graph, "", out)
    return out


def _validate_into(graph: Graph, prefix: str, out: list) -> None:
    def add(kind, subject, msg):
        out.append(Violation(kind, prefix + subject, msg))

    defined: dict = {}
    for vi in graph.inputs:
        if vi.name in defined:
            add("DuplicateProducer", vi.name, "graph input declared twice")
        defined[vi.name] = "input"
        if any(s <= 0 for s in vi.shape):
            add("InvalidShape", vi.name, f"non-positive dimension in {vi.shape}")
    for name, t in graph.initializers.items():
        if name in defined:
            add("DuplicateProducer", name, "initializer shadows a graph input")
        defined[name] = "initializer"
        if not isinstance(t, Tensor):
            add("InvalidTensor", name, "initializer is not a Tensor")
    node_names = set()
    for n in graph.nodes:
        if n.name in node_names:
            add("DuplicateNodeName", n.name, "node name used twice")
        node_names.add(n.name)
        if n.op_type not in SUPPORTED_OPS:
            add("UnknownOp", n.name, f"unsupported op_type {n.op_type!r}")
        for o in n.outputs:
            if o in defined:
                add("DuplicateProducer", o,
                    f"written by node {n.name!r} and also by {defined[o]}")
            else:
                defined[o] = f"node {n.name!r}"
    for n in graph.nodes:
        for i in n.inputs:
            if i not in defined:
                add("UnresolvedInput", n.name, f"input {i!r} has no producer")
        if n.op_type == "Scan":
            _validate_scan(n, prefix, out)
        elif n.body is not None:
            add("UnexpectedBody", n.name, "only Scan nodes may carry a body")
    for o in graph.outputs:
        if o not in defined:
            add("UnresolvedOutput", o, "graph output has no producer")
    try:
        topo_sort(graph)
    except CycleDetected as e:
        add("Cycle", graph.name, str(e))


def _validate_scan(n: Node, prefix: str, out: list) -> None:
    body = n.attributes.get("body")
    subject = prefix + n.name
    if not isinstance(body, Graph):
        out.append(Violation("ScanBody", subject, "Scan node needs one body graph"))
        return
    n_scan = int(n.attributes.get("num_scan_inputs", 1))
    n_state = len(n.inputs) - n_scan
    if n_state < 0 or len(body.inputs) != len(n.inputs):
        out.append(Violation("ScanSignature", subject,
                             "body inputs do not match Scan inputs"))
    if len(body.outputs) != len(n.outputs):
        out.append(Violation("ScanSignature", subject,
                             "body outputs do not match Scan outputs"))
    _validate_into(body, subject + "/", out)


# ---------------------------------------------------------------------------
# ordering

def topo_sort(graph: Graph) -> list:
    """Dependency order of the nodes; ties broken by node name."""
    producers = graph.producers()
    deps = {}
    users: dict = {}
    for n in graph.nodes:
        ds = {producers[i].name for i in n.inputs if i in producers}
        deps[n.name] = ds
        for d in ds:
            users.setdefault(d, []).append(n.name)
    by_name = {n.name: n for n in graph.nodes}
    ready = [name for name, ds in deps.items() if not ds]
    heapq.heapify(ready)
    order = []
    remaining = {k: set(v) for k, v in deps.items()}
    while ready:
        name = heapq.heappop(ready)
        order.append(by_name[name])
        for u in users.get(name, []):
            remaining[u].discard(name)
            if not remaining[u]:
                heapq.heappush(ready, u)
                remaining[u] = None
    if len(order) != len(graph.nodes):
        stuck = sorted(k for k, v in remaining.items() if v)
        raise CycleDetected(f"dependency cycle through nodes {stuck}")
    return order


# ---------------------------------------------------------------------------
# pattern matching and chain replacement

Predicate = Union[str, Callable[[Node], bool]]


@dataclass
class NodeChain:
    nodes: list

    @property
    def names(self) -> list:
        return [n.name for n in self.nodes]

    def __len__(self):
        return len(self.nodes)


def _matches(pred: Predicate, node: Node) -> bool:
    return node.op_type == pred if isinstance(pred, str) else bool(pred(node))


def find_pattern(graph: Graph, pattern: Sequence[Predicate]) -> list:
    """All chains of exclusively-connected nodes matching `pattern` in order.

    Consecutive nodes must be producer -> consumer through a single tensor that
    nothing else reads and that is not a graph output.
    """
    if not pattern:
        return []
    consumers = graph.consumers()
    outputs = set(graph.outputs)
    chains = []
    for start in graph.nodes:
        if not _matches(pattern[0], start):
            continue
        chain = [start]
        for pred in pattern[1:]:
            nxt = _exclusive_successor(chain[-1], consumers, outputs)
            if nxt is None or not _matches(pred, nxt):
                chain = None
                break
            chain.append(nxt)
        if chain is not None:
            chains.append(NodeChain(chain))
    return chains


def _exclusive_successor(node: Node, consumers: dict, outputs: set):
    if len(node.outputs) != 1:
        return None
    t = node.outputs[0]
    users = consumers.get(t, [])
    if t in outputs or len(users) != 1:
        return None
    return users[0]


def chain_boundary(graph: Graph, chain: NodeChain) -> tuple:
    """(external inputs, external outputs) of a chain within `graph`."""
    members = {n.name for n in chain.nodes}
    produced = [o for n in chain.nodes for o in n.outputs]
    internal = set(produced)
    ext_in = []
    for n in chain.nodes:
        for i in n.inputs:
            if i not in internal and i not in ext_in:
                ext_in.append(i)
    consumers = graph.consumers()
    outputs = set(graph.outputs)
    ext_out = [o for o in produced
               if o in outputs or any(c.name not in members
                                      for c in consumers.get(o, []))]
    return ext_in, ext_out


def replace_chain(graph: Graph, chain: NodeChain, replacement: list,
                  initializers: dict | None = None) -> Graph:
    """Return a copy of `graph` with `chain` swapped for `replacement` nodes.

    The replacement must produce every externally visible output of the chain
    and may only read the chain's external inputs, existing tensors and the
    supplied new initializers.
    """
    ext_in, ext_out = chain_boundary(graph, chain)
    initializers = initializers or {}
    rep_produced = {o for n in replacement for o in n.outputs}
    missing = [o for o in ext_out if o not in rep_produced]
    if missing:
        raise RewireMismatch(f"replacement does not produce {missing}")
    members = {n.name for n in chain.nodes}
    outside = set(graph.input_names) | set(graph.initializers)
    for n in graph.nodes:
        if n.name not in members:
            outside.update(n.outputs)
    allowed = set(ext_in) | outside | set(initializers)
    for n in replacement:
        for i in n.inputs:
            if i not in allowed and i not in rep_produced:
                raise RewireMismatch(f"replacement reads unknown tensor {i!r}")
    clash = (rep_produced - set(ext_out)) & (
        outside | set(initializers) | set(ext_in))
    if clash:
        raise RewireMismatch(f"replacement overwrites existing tensors {sorted(clash)}")
    new = graph.copy()
    first = min(i for i, n in enumerate(new.nodes) if n.name in members)
    kept = [n for n in new.nodes if n.name not in members]
    before = [n for n in new.nodes[:first] if n.name not in members]
    after = kept[len(before):]
    new.nodes = before + copy.deepcopy(list(replacement)) + after
    for name, t in initializers.items():
        new.initializers[name] = t
    for n in chain.nodes:
        for o in n.outputs:
            if o not in rep_produced:
                new.value_info.pop(o, None)
    return new
