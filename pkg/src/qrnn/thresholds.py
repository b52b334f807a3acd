"""Multi-threshold operator and threshold generation for monotone activations."""

from __future__ import annotations

import enum
import math
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ShapeMismatch, UnreachableLevels, UnsupportedActivation
from .inference import mt_out_dtype
from .ir import FLOAT, DataType, Graph, Node, smallest_int_type
from .quant import QuantParams
from .rewrite import PassReport, transformation


class ActivationKind(enum.Enum):
    TANH = "TANH"
    SIGMOID = "SIGMOID"
    RELU = "RELU"
    IDENTITY = "IDENTITY"


ACTIVATION_OPS = {"Tanh": ActivationKind.TANH, "Sigmoid": ActivationKind.SIGMOID,
                  "ReLU": ActivationKind.RELU}


@dataclass
class MultiThresholdAttrs:
    thresholds: np.ndarray
    out_scale: float = 1.0
    out_bias: float = 0.0
    out_dtype: DataType = FLOAT
    channel_axis: int = -1

    def __post_init__(self):
        t = np.asarray(self.thresholds, dtype=np.float64)
        if t.ndim == 1:
            t = t[None, :]
        if t.ndim != 2:
            raise ShapeMismatch("thresholds must be a C x L matrix")
        if t.shape[1] and np.any(t[:, 1:] < t[:, :-1]):
            raise ValueError("threshold rows must be non-decreasing")
        self.thresholds = t

    @property
    def channels(self) -> int:
        return self.thresholds.shape[0]

    @property
    def levels(self) -> int:
        return self.thresholds.shape[1]

    def to_attrs(self) -> dict:
        d = {"thresholds": self.thresholds, "out_scale": float(self.out_scale),
             "out_bias": float(self.out_bias), "out_dtype": self.out_dtype}
        if self.channel_axis != -1:
            d["channel_axis"] = int(self.channel_axis)
        return d

    @classmethod
    def from_attrs(cls, attrs: dict) -> "MultiThresholdAttrs":
        return cls(np.asarray(attrs["thresholds"], dtype=np.float64),
                   float(attrs.get("out_scale", 1.0)),
                   float(attrs.get("out_bias", 0.0)),
                   attrs.get("out_dtype", FLOAT),
                   int(attrs.get("channel_axis", -1)))


def threshold_counts(x, thresholds: np.ndarray, channel_axis: int = -1) -> np.ndarray:
    """Per element, how many thresholds of its channel the value meets."""
    x = np.asarray(x)
    t = np.asarray(thresholds, dtype=np.float64)
    if x.ndim == 0:
        if t.shape[0] != 1:
            raise ShapeMismatch(f"scalar input but {t.shape[0]} threshold channels")
        return (x >= t[0]).sum().astype(np.int64)
    xm = np.moveaxis(x, channel_axis, -1)
    c = xm.shape[-1]
    if t.shape[0] not in (1, c):
        raise ShapeMismatch(f"{c} input channels vs {t.shape[0]} threshold rows")
    counts = (xm[..., None] >= t).sum(axis=-1)
    return np.moveaxis(counts, -1, channel_axis).astype(np.int64)


def multithreshold(x, attrs: MultiThresholdAttrs) -> np.ndarray:
    counts = threshold_counts(x, attrs.thresholds, attrs.channel_axis)
    if attrs.out_dtype.is_int:
        return counts * int(attrs.out_scale) + int(attrs.out_bias)
    return attrs.out_scale * counts + attrs.out_bias


def _inverse(kind: ActivationKind, b: float) -> float:
    if kind is ActivationKind.IDENTITY:
        return b
    if kind is ActivationKind.RELU:
        return b if b > 0 else -math.inf
    if kind is ActivationKind.TANH:
        if b <= -1.0:
            return -math.inf
        if b >= 1.0:
            return math.inf
        return math.atanh(b)
    if kind is ActivationKind.SIGMOID:
        if b <= 0.0:
            return -math.inf
        if b >= 1.0:
            return math.inf
        return math.log(b) - math.log1p(-b)
    raise UnsupportedActivation(f"no inverse for {kind}")


def apply_activation(kind: ActivationKind, x):
    x = np.asarray(x, dtype=np.float64)
    if kind is ActivationKind.TANH:
        return np.tanh(x)
    if kind is ActivationKind.SIGMOID:
        return 1.0 / (1.0 + np.exp(-x))
    if kind is ActivationKind.RELU:
        return np.maximum(x, 0.0)
    return x


def gen_thresholds(kind: ActivationKind | str, qp_out: QuantParams) -> MultiThresholdAttrs:
    """Thresholds making multithreshold(x) equal quant_fused(f(x), qp_out).

    Threshold k sits at the pre-image of the rounding boundary between levels
    k-1 and k. Levels the activation can never reach get +/-inf entries (an
    UnreachableLevels warning is issued). Exact rounding ties are resolved
    upwards by the comparison, which differs from round-half-even on ties.
    """
    kind = ActivationKind(kind.upper()) if isinstance(kind, str) else kind
    if not isinstance(kind, ActivationKind):
        raise UnsupportedActivation(f"unsupported activation {kind!r}")
    s, zp = qp_out.scale, qp_out.zero_point
    n_levels = qp_out.qmax - qp_out.qmin
    ts = []
    for k in range(1, n_levels + 1):
        boundary = s * (qp_out.qmin + k - 0.5 - zp)
        ts.append(_inverse(kind, boundary))
    t = np.array(ts, dtype=np.float64)[None, :]
    unreachable = int(np.sum(~np.isfinite(t)))
    if unreachable:
        warnings.warn(UnreachableLevels(
            f"{unreachable} of {n_levels} thresholds for {kind.value} with "
            f"{qp_out.dtype} scale {s:g} fall outside the activation range"),
            stacklevel=2)
    bias = s * (qp_out.qmin - zp)
    return MultiThresholdAttrs(t, out_scale=s, out_bias=bias, out_dtype=FLOAT)


def raw_count_dtype(levels: int) -> DataType:
    return smallest_int_type(0, levels)


@transformation("convert_quant_to_thresholds")
def convert_quant_to_thresholds_pass(graph: Graph, report: PassReport, ctx) -> None:
    """(activation ->) Quant  becomes  MultiThreshold -> Mul(scale) -> Add(offset).

    4-D (NCHW) inputs get channel_axis 1 so per-channel constants can be
    absorbed later.
    """
    for q in list(graph.nodes):
        if q.op_type != "Quant" or not ctx.alive(q):
            continue
        qp = QuantParams.from_attrs(q.attributes)
        act = ctx.producer(q.inputs[0])
        if act is not None and act.op_type in ACTIVATION_OPS and ctx.exclusive(act.outputs[0]):
            kind, chain, src = ACTIVATION_OPS[act.op_type], [act, q], act.inputs[0]
        else:
            kind, chain, src = ActivationKind.IDENTITY, [q], q.inputs[0]
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            attrs = gen_thresholds(kind, qp)
        for w in caught:
            report.diag(f"{q.name}: {w.message}")
        stem = q.name.removesuffix("_quant")
        levels = attrs.levels
        shape = ctx.shape(src)
        axis = 1 if shape is not None and len(shape) == 4 else -1
        raw = MultiThresholdAttrs(attrs.thresholds, 1.0, 0.0, raw_count_dtype(levels), axis)
        t_mt, t_mul = ctx.fresh(stem + "_mt_out"), ctx.fresh(stem + "_mt_scaled")
        c_scale = ctx.add_const(stem + "_scale", np.float64(qp.scale))
        c_off = ctx.add_const(stem + "_offset", np.float64(attrs.out_bias))
        new = [
            Node("MultiThreshold", ctx.fresh(stem + "_mt"), [src], [t_mt], raw.to_attrs()),
            Node("Mul", ctx.fresh(stem + "_mt_mul"), [t_mt, c_scale], [t_mul]),
            Node("Add", ctx.fresh(stem + "_mt_add"), [t_mul, c_off], [q.outputs[0]]),
        ]
        ctx.replace(chain, new)
        report.applied(removed=len(chain), added=3)


def mt_attrs_dtype(attrs: MultiThresholdAttrs) -> DataType:
    return mt_out_dtype(attrs.levels, attrs.out_scale, attrs.out_bias)
