"""Shared machinery for graph -> graph rewrite passes.

A pass body is a function ``fn(graph, report, ctx)`` that mutates a private
working copy through the :class:`RewriteContext`. The :func:`transformation`
decorator turns it into a pure ``graph -> graph`` function that is applied to
the top-level graph and every Scan body until it stops firing.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass, field

import numpy as np

from .ir import FLOAT, DataType, Graph, Node, Tensor, iter_graphs

PASSES: dict = {}

MAX_SWEEPS = 10_000


@dataclass
class PassReport:
    name: str
    applications: int = 0
    nodes_removed: int = 0
    nodes_added: int = 0
    diagnostics: list = field(default_factory=list)
    iteration: int | None = None

    def applied(self, removed: int = 0, added: int = 0) -> None:
        self.applications += 1
        self.nodes_removed += removed
        self.nodes_added += added

    def diag(self, message: str) -> None:
        if message not in self.diagnostics:
            self.diagnostics.append(message)

    def to_dict(self) -> dict:
        d = {"pass": self.name, "applications": self.applications,
             "nodes_removed": self.nodes_removed,
             "nodes_added": self.nodes_added,
             "diagnostics": list(self.diagnostics)}
        if self.iteration is not None:
            d["iteration"] = self.iteration
        return d


class RewriteContext:
    """Mutable view over one (sub)graph used while a pass runs."""

    def __init__(self, graph: Graph, is_body: bool):
        self.graph = graph
        self.is_body = is_body
        self._consumers = None
        self._producers = None
        self._typed = False
        self._taken = None
        self._dead: set = set()

    # -- bookkeeping -------------------------------------------------------
    def _dirty(self):
        self._consumers = self._producers = None
        self._typed = False

    def fresh(self, stem: str) -> str:
        if self._taken is None:
            g = self.graph
            self._taken = g.tensor_names() | {n.name for n in g.nodes}
        return self.graph.fresh_name(stem, self._taken)

    def alive(self, *nodes: Node) -> bool:
        return not any(id(n) in self._dead for n in nodes)

    # -- queries -----------------------------------------------------------
    def producer(self, tensor: str) -> Node | None:
        if self._producers is None:
            self._producers = self.graph.producers()
        return self._producers.get(tensor)

    def consumers(self, tensor: str) -> list:
        if self._consumers is None:
            self._consumers = self.graph.consumers()
        return self._consumers.get(tensor, [])

    def exclusive(self, tensor: str) -> bool:
        """True when exactly one node reads `tensor` and it is not an output."""
        return len(self.consumers(tensor)) == 1 and tensor not in self.graph.outputs

    def const(self, tensor: str) -> np.ndarray | None:
        t = self.graph.initializers.get(tensor)
        return None if t is None else t.values

    def scalar(self, tensor: str) -> float | None:
        v = self.const(tensor)
        if v is None or v.size != 1:
            return None
        return float(v.reshape(()))

    def split_const(self, node: Node):
        """(dynamic input, constant input) of a binary node, or None."""
        if len(node.inputs) != 2:
            return None
        a, b = node.inputs
        ca, cb = a in self.graph.initializers, b in self.graph.initializers
        if cb and not ca:
            return a, b
        if ca and not cb:
            return b, a
        return None

    def dtype(self, tensor: str) -> DataType | None:
        if not self._typed:
            from .inference import infer_types_inplace
            infer_types_inplace(self.graph)
            self._typed = True
        return self.graph.dtype_of(tensor)

    def shape(self, tensor: str):
        self.dtype(tensor)
        return self.graph.shape_of(tensor)

    # -- edits -------------------------------------------------------------
    def add_const(self, stem: str, value, dtype: DataType = FLOAT) -> str:
        name = self.fresh(stem)
        self.graph.initializers[name] = Tensor(value, dtype)
        return name

    def replace(self, old: list, new: list) -> None:
        """Swap the `old` nodes for `new`, inserted where the first old one was."""
        nodes = self.graph.nodes
        ids = {id(n) for n in old}
        pos = min(i for i, n in enumerate(nodes) if id(n) in ids)
        kept_before = [n for n in nodes[:pos] if id(n) not in ids]
        kept_after = [n for n in nodes[pos:] if id(n) not in ids]
        self.graph.nodes = kept_before + list(new) + kept_after
        self._dead |= ids
        self._dirty()

    def insert(self, new: list, before: Node | None = None) -> None:
        nodes = self.graph.nodes
        pos = len(nodes) if before is None else next(
            i for i, n in enumerate(nodes) if n is before)
        self.graph.nodes = nodes[:pos] + list(new) + nodes[pos:]
        self._dirty()

    def touched(self) -> None:
        """Signal an in-place edit of an existing node."""
        self._dirty()


def _walk(graph: Graph, is_body: bool = False):
    yield graph, is_body
    for n in list(graph.nodes):
        if n.body is not None:
            yield from _walk(n.body, True)


def prune_initializers(graph: Graph) -> None:
    for g in iter_graphs(graph):
        used = {i for n in g.nodes for i in n.inputs} | set(g.outputs)
        for name in [k for k in g.initializers if k not in used]:
            del g.initializers[name]
        produced = {o for n in g.nodes for o in n.outputs}
        for name in [k for k in g.value_info if k not in produced]:
            del g.value_info[name]


def transformation(name: str):
    """Register `fn(graph, report, ctx)` as a pure pass called `name`."""

    def deco(fn):
        def run(graph: Graph):
            work = graph.copy()
            report = PassReport(name)
            for _ in range(MAX_SWEEPS):
                before = report.applications
                for sub, is_body in list(_walk(work)):
                    fn(sub, report, RewriteContext(sub, is_body))
                if report.applications == before:
                    break
            if report.applications == 0:
                return graph, report
            prune_initializers(work)
            from .inference import infer_types_inplace
            infer_types_inplace(work)
            return work, report

        @functools.wraps(fn)
        def public(graph: Graph) -> Graph:
            return run(graph)[0]

        public.run = run
        public.pass_name = name
        PASSES[name] = public
        return public

    return deco


def apply_pass(name: str, graph: Graph):
    """Run the registered pass `name`; returns (graph, PassReport)."""
    return PASSES[name].run(graph)
