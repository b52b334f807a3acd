"""Sampling-based functional equivalence check between two graphs."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import SignatureMismatch
from .executor import execute, prepare
from .quant import QuantParams
from .thresholds import ACTIVATION_OPS, gen_thresholds

DEFAULT_FLOAT_RANGE = (-2.0, 2.0)
BOUNDARY_MARGIN = 1e-3


@dataclass
class OutputComparison:
    name: str
    is_int: bool
    mismatches: int = 0
    max_abs_error: float = 0.0
    max_rel_error: float = 0.0

    def to_dict(self) -> dict:
        return {"name": self.name, "int": self.is_int, "mismatches": self.mismatches,
                "max_abs_error": self.max_abs_error, "max_rel_error": self.max_rel_error}


@dataclass
class EquivalenceReport:
    n_samples: int
    rel_tol: float
    seed: int
    outputs: list = field(default_factory=list)

    @property
    def int_mismatches(self) -> int:
        return sum(o.mismatches for o in self.outputs)

    @property
    def max_abs_error(self) -> float:
        return max((o.max_abs_error for o in self.outputs), default=0.0)

    @property
    def max_rel_error(self) -> float:
        return max((o.max_rel_error for o in self.outputs if not o.is_int), default=0.0)

    @property
    def passed(self) -> bool:
        return self.int_mismatches == 0 and self.max_rel_error <= self.rel_tol

    def to_dict(self) -> dict:
        return {"verdict": "pass" if self.passed else "fail",
                "samples": self.n_samples, "seed": self.seed, "rel_tol": self.rel_tol,
                "int_mismatches": self.int_mismatches,
                "max_abs_error": self.max_abs_error,
                "max_rel_error": self.max_rel_error,
                "outputs": [o.to_dict() for o in self.outputs]}


def _signature(g):
    return ([(vi.name, tuple(vi.shape), vi.dtype) for vi in g.inputs], list(g.outputs))


def input_boundaries(graph, name: str) -> list:
    """(boundary points, margin) pairs for quantizers reading input `name`.

    Covers Quant and MultiThreshold consumers, and activation -> Quant
    chains (boundaries mapped back through the activation).
    """
    out = []
    consumers = graph.consumers().get(name, [])
    cons_all = graph.consumers()
    for n in consumers:
        if n.op_type == "Quant":
            qp = QuantParams.from_attrs(n.attributes)
            ks = np.arange(qp.qmin, qp.qmax)
            out.append(((ks + 0.5 - qp.zero_point) * qp.scale, qp.scale * BOUNDARY_MARGIN))
        elif n.op_type == "MultiThreshold":
            t = np.asarray(n.attributes["thresholds"], dtype=np.float64).ravel()
            t = t[np.isfinite(t)]
            if t.size:
                gaps = np.diff(np.unique(t))
                spacing = float(np.min(gaps)) if gaps.size else 1.0
                out.append((t, spacing * BOUNDARY_MARGIN))
        elif n.op_type in ACTIVATION_OPS:
            nxt = cons_all.get(n.outputs[0], [])
            if len(nxt) == 1 and nxt[0].op_type == "Quant":
                qp = QuantParams.from_attrs(nxt[0].attributes)
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore")
                    t = gen_thresholds(ACTIVATION_OPS[n.op_type], qp).thresholds.ravel()
                t = t[np.isfinite(t)]
                out.append((t, qp.scale * BOUNDARY_MARGIN))
    return out


def _nudge(x: np.ndarray, boundaries: list) -> np.ndarray:
    flat = x.ravel().copy()
    for points, margin in boundaries:
        if not len(points):
            continue
        points = np.sort(points)
        idx = np.clip(np.searchsorted(points, flat), 1, len(points)) - 1
        for cand in (idx, np.minimum(idx + 1, len(points) - 1)):
            b = points[cand]
            d = flat - b
            close = np.abs(d) < margin
            flat[close] = b[close] + np.where(d[close] >= 0, margin, -margin)
    return flat.reshape(x.shape)


def sample_feeds(graph, rng: np.random.Generator, float_range=DEFAULT_FLOAT_RANGE,
                 boundary_graphs=()) -> dict:
    """One random feed per graph input, avoiding quantizer decision points."""
    feeds = {}
    for vi in graph.inputs:
        if vi.dtype.is_int:
            feeds[vi.name] = rng.integers(vi.dtype.min, vi.dtype.max + 1, size=vi.shape)
        else:
            lo, hi = float_range
            x = rng.uniform(lo, hi, size=vi.shape)
            bounds = []
            for g in (graph,) + tuple(boundary_graphs):
                bounds += input_boundaries(g, vi.name)
            feeds[vi.name] = _nudge(x, bounds)
    return feeds


def verify_equivalence(g1, g2, n_samples: int = 100, seed: int = 42,
                       rel_tol: float = 1e-6, float_range=DEFAULT_FLOAT_RANGE
                       ) -> EquivalenceReport:
    """Execute both graphs on the same seeded inputs and compare outputs.

    INT outputs (in both graphs) must match exactly; FLOAT outputs are
    compared by max|a - b| / max|b| per sample.
    """
    g1, g2 = prepare(g1), prepare(g2)
    if _signature(g1) != _signature(g2):
        raise SignatureMismatch(
            f"signatures differ: {_signature(g1)} vs {_signature(g2)}")
    rng = np.random.default_rng(seed)
    report = EquivalenceReport(n_samples, rel_tol, seed)
    comps = {}
    for name in g1.outputs:
        is_int = bool(g1.dtype_of(name).is_int and g2.dtype_of(name).is_int)
        comps[name] = OutputComparison(name, is_int)
    report.outputs = list(comps.values())
    for _ in range(n_samples):
        feeds = sample_feeds(g1, rng, float_range, (g2,))
        r1, r2 = execute(g1, feeds), execute(g2, feeds)
        for name, c in comps.items():
            a = r1[name].values.astype(np.float64)
            b = r2[name].values.astype(np.float64)
            if a.shape != b.shape:
                raise SignatureMismatch(f"output {name!r}: shapes {a.shape} vs {b.shape}")
            err = float(np.max(np.abs(a - b))) if a.size else 0.0
            if c.is_int:
                c.mismatches += int(np.count_nonzero(a != b))
            peak = float(np.max(np.abs(b))) if b.size else 0.0
            rel = 0.0 if err == 0 else (err / peak if peak > 0 else math.inf)
            c.max_abs_error = max(c.max_abs_error, err)
            c.max_rel_error = max(c.max_rel_error, rel)
    return report
