"""Uniform quantizer semantics and the QCDQ -> Quant fusion pass."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .errors import InvalidQuantParams, RangeError
from .ir import DataType, Graph, Node, find_pattern
from .rewrite import PassReport, transformation


@dataclass(frozen=True)
class QuantParams:
    scale: float
    zero_point: int = 0
    bits: int = 8
    signed: bool = True
    narrow_range: bool = False
    rounding: str = "HALF_EVEN"

    def __post_init__(self):
        if not (self.scale > 0 and np.isfinite(self.scale)):
            raise InvalidQuantParams(f"scale must be positive, got {self.scale}")
        if not 1 <= self.bits <= 32:
            raise InvalidQuantParams(f"bits must be in 1..32, got {self.bits}")
        if self.rounding != "HALF_EVEN":
            raise InvalidQuantParams(f"unsupported rounding {self.rounding!r}")
        if self.narrow_range and not self.signed:
            raise InvalidQuantParams("narrow_range applies to signed quantizers only")
        if not self.qmin <= self.zero_point <= self.qmax:
            raise InvalidQuantParams(
                f"zero_point {self.zero_point} outside [{self.qmin}, {self.qmax}]")

    @property
    def qmin(self) -> int:
        if not self.signed:
            return 0
        return -(2 ** (self.bits - 1)) + (1 if self.narrow_range else 0)

    @property
    def qmax(self) -> int:
        return 2 ** (self.bits - 1) - 1 if self.signed else 2 ** self.bits - 1

    @property
    def levels(self) -> int:
        return self.qmax - self.qmin + 1

    @property
    def dtype(self) -> DataType:
        return DataType.int(self.bits, self.signed)

    @property
    def min_value(self) -> float:
        return self.scale * (self.qmin - self.zero_point)

    @property
    def max_value(self) -> float:
        return self.scale * (self.qmax - self.zero_point)

    def to_attrs(self) -> dict:
        d = asdict(self)
        d.pop("rounding")
        return d

    @classmethod
    def from_attrs(cls, attrs: dict) -> "QuantParams":
        return cls(scale=float(attrs["scale"]),
                   zero_point=int(attrs.get("zero_point", 0)),
                   bits=int(attrs["bits"]),
                   signed=bool(attrs.get("signed", True)),
                   narrow_range=bool(attrs.get("narrow_range", False)))


def quantize(x, qp: QuantParams) -> np.ndarray:
    """Integer codes clamp(round_half_even(x / scale) + zero_point)."""
    x = np.asarray(x, dtype=np.float64)
    q = np.round(x / qp.scale) + qp.zero_point
    return np.clip(q, qp.qmin, qp.qmax).astype(np.int64)


def dequantize(q, qp: QuantParams) -> np.ndarray:
    q = np.asarray(q)
    if q.dtype.kind == "f" and np.any(q != np.round(q)):
        raise RangeError("dequantize expects integer codes")
    q = q.astype(np.int64)
    if q.size and (q.min() < qp.qmin or q.max() > qp.qmax):
        raise RangeError(f"codes outside [{qp.qmin}, {qp.qmax}]")
    return (q - qp.zero_point) * qp.scale


def quant_fused(x, qp: QuantParams) -> np.ndarray:
    """Projection of `x` onto the quantizer grid (the Quant node semantics)."""
    return dequantize(quantize(x, qp), qp)


def container_bits(bits: int) -> int:
    """Storage width used by QuantizeLinear for a `bits`-wide quantizer."""
    for width in (8, 16, 32):
        if bits <= width:
            return width
    raise InvalidQuantParams(f"no container for {bits} bits")


def qcdq_nodes(x: str, y: str, qp: QuantParams, prefix: str) -> list:
    """QuantizeLinear -> Clip -> DequantizeLinear triple realizing `qp`."""
    width = container_bits(qp.bits)
    q_attrs = {"scale": qp.scale, "zero_point": qp.zero_point,
               "bits": width, "signed": qp.signed}
    return [
        Node("QuantizeLinear", f"{prefix}_ql", [x], [f"{prefix}_q"], dict(q_attrs)),
        Node("Clip", f"{prefix}_clip", [f"{prefix}_q"], [f"{prefix}_qc"],
             {"min": qp.qmin, "max": qp.qmax}),
        Node("DequantizeLinear", f"{prefix}_dql", [f"{prefix}_qc"], [y], dict(q_attrs)),
    ]


def _qp_from_clip(scale, zero_point, lo, hi) -> QuantParams | None:
    lo, hi = int(lo), int(hi)
    if lo == 0 and hi > 0 and (hi + 1) & hi == 0:
        return QuantParams(scale, zero_point, (hi + 1).bit_length() - 1, False)
    if hi > 0 and (hi + 1) & hi == 0:
        bits = (hi + 1).bit_length()
        if lo == -(hi + 1):
            return QuantParams(scale, zero_point, bits, True)
        if lo == -hi:
            return QuantParams(scale, zero_point, bits, True, narrow_range=True)
    return None


@transformation("fuse_qcdq")
def fuse_qcdq_pass(graph: Graph, report: PassReport, ctx) -> None:
    """Replace QuantizeLinear -> Clip -> DequantizeLinear with one Quant node."""
    for chain in find_pattern(graph, ["QuantizeLinear", "Clip", "DequantizeLinear"]):
        ql, clip, dql = chain.nodes
        a, b = ql.attributes, dql.attributes
        if (a["scale"], a.get("zero_point", 0)) != (b["scale"], b.get("zero_point", 0)):
            report.diag(f"InconsistentQCDQ at {ql.name}: Q/DQ parameters differ")
            continue
        try:
            qp = _qp_from_clip(a["scale"], a.get("zero_point", 0),
                               clip.attributes["min"], clip.attributes["max"])
        except InvalidQuantParams:
            qp = None
        if qp is None or qp.signed != bool(a.get("signed", True)) or \
                qp.bits > int(a.get("bits", 32)):
            report.diag(f"InconsistentQCDQ at {ql.name}: Clip bounds "
                        f"[{clip.attributes['min']}, {clip.attributes['max']}] "
                        "are not a quantizer range")
            continue
        fused = Node("Quant", ctx.fresh(ql.name.removesuffix("_ql") + "_quant"),
                     [ql.inputs[0]], [dql.outputs[0]], qp.to_attrs())
        ctx.replace(chain.nodes, [fused])
        report.applied(removed=3, added=1)

