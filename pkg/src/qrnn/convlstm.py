"""Convolutional front end + LSTM + dense head, and batch-norm folding."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .builder import (LSTMQuantConfig, _weight_codes, lstm_body, qp_from_dict,
                      random_lstm_weights, w8a6_act_qps)
from .errors import ConfigError, ShapeChainError
from .inference import infer_types
from .ir import FLOAT, Graph, Node, Tensor, ValueInfo
from .quant import QuantParams
from .rewrite import PassReport, transformation


def _w8() -> QuantParams:
    return QuantParams(1 / 255, 0, 8, signed=True, narrow_range=True)


@dataclass
class ConvLSTMConfig:
    rows: int = 100
    cols: int = 40
    block1: tuple = (64, 32, 32)
    block2: tuple = (64, 16, 4)
    kernel: int = 3
    first_stride: int = 2
    hidden_size: int = 64
    dense: tuple = (256, 3)
    weight_qp: QuantParams = field(default_factory=_w8)
    act_qp: QuantParams = field(default_factory=lambda: QuantParams(2 / 31, 0, 6, signed=False))
    input_qp: QuantParams = field(default_factory=lambda: QuantParams(1 / 31, 0, 8, signed=True))
    lstm_act_qps: dict = field(default_factory=w8a6_act_qps)
    bn_epsilon: float = 1e-5

    def __post_init__(self):
        self.block1, self.block2, self.dense = tuple(self.block1), tuple(self.block2), tuple(self.dense)
        for name in ("rows", "cols", "kernel", "first_stride", "hidden_size"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or v < 1:
                raise ConfigError(f"{name} must be a positive integer, got {v!r}")
        if self.kernel % 2 != 1:
            raise ConfigError("kernel size must be odd for SAME padding")
        if not self.block1 or not self.block2 or len(self.dense) != 2:
            raise ConfigError("two non-empty conv blocks and two dense sizes are required")
        self.layer_shapes()

    def layers(self) -> list:
        """(in_channels, out_channels, stride) for every conv layer."""
        out, c = [], 1
        for block in (self.block1, self.block2):
            for k, filters in enumerate(block):
                out.append((c, int(filters), self.first_stride if k == 0 else 1))
                c = int(filters)
        return out

    def layer_shapes(self) -> list:
        """Feature-map (C, H, W) after every layer; raises ShapeChainError."""
        h, w, shapes = self.rows, self.cols, []
        for cin, cout, stride in self.layers():
            if h % stride or w % stride:
                raise ShapeChainError(
                    f"feature map {h}x{w} is not divisible by stride {stride}")
            h, w = h // stride, w // stride
            shapes.append((cout, h, w))
        return shapes

    @property
    def seq_len(self) -> int:
        return self.layer_shapes()[-1][1]

    @property
    def lstm_input(self) -> int:
        c, _, w = self.layer_shapes()[-1]
        return c * w

    def lstm_config(self) -> LSTMQuantConfig:
        return LSTMQuantConfig(self.lstm_input, self.hidden_size, self.seq_len,
                               self.weight_qp, dict(self.lstm_act_qps), None)

    def to_dict(self) -> dict:
        return {"model": "convlstm", "rows": self.rows, "cols": self.cols,
                "block1": list(self.block1), "block2": list(self.block2),
                "kernel": self.kernel, "first_stride": self.first_stride,
                "hidden_size": self.hidden_size, "dense": list(self.dense),
                "weight_qp": self.weight_qp.to_attrs(), "act_qp": self.act_qp.to_attrs(),
                "input_qp": self.input_qp.to_attrs(),
                "lstm_act_qps": {k: v.to_attrs() for k, v in self.lstm_act_qps.items()},
                "bn_epsilon": self.bn_epsilon}

    @classmethod
    def from_dict(cls, d: dict) -> "ConvLSTMConfig":
        kw = {k: v for k, v in d.items() if k != "model"}
        known = set(cls.__dataclass_fields__)
        unknown = sorted(set(kw) - known)
        if unknown:
            raise ConfigError(f"unknown ConvLSTM config field(s): {', '.join(unknown)}")
        for key in ("weight_qp", "act_qp", "input_qp"):
            if key in kw:
                kw[key] = qp_from_dict(kw[key], key)
        if "lstm_act_qps" in kw:
            kw["lstm_act_qps"] = {k: qp_from_dict(v, f"lstm_act_qps.{k}")
                                  for k, v in kw["lstm_act_qps"].items()}
        try:
            return cls(**kw)
        except TypeError as e:
            raise ConfigError(str(e)) from None


def random_convlstm_weights(config: ConvLSTMConfig, seed: int = 0) -> dict:
    """On-grid conv/dense weights, positive BN gammas, float biases."""
    rng = np.random.default_rng(seed)
    qp = config.weight_qp
    k = config.kernel
    w = {}
    for idx, (cin, cout, _) in enumerate(config.layers()):
        w[f"conv{idx}_w"] = rng.integers(qp.qmin, qp.qmax + 1, (cout, cin, k, k)) * qp.scale
        w[f"conv{idx}_gamma"] = rng.uniform(0.5, 1.5, cout)
        w[f"conv{idx}_beta"] = rng.uniform(-0.5, 0.5, cout)
        w[f"conv{idx}_mean"] = rng.uniform(-0.5, 0.5, cout)
        # spread so normalised activations land inside the 6-bit grid
        fan_in = cin * k * k
        w[f"conv{idx}_var"] = rng.uniform(0.5, 1.5, cout) * fan_in * (qp.qmax * qp.scale) ** 2
    lstm = random_lstm_weights(config.lstm_input, config.hidden_size,
                               int(rng.integers(2 ** 31)), qp)
    for name in lstm.tensor_names():
        w[f"lstm_{name}"] = getattr(lstm, name)
    d1, d2 = config.dense
    w["dense1_w"] = rng.integers(qp.qmin, qp.qmax + 1, (config.hidden_size, d1)) * qp.scale
    w["dense1_b"] = rng.uniform(-0.5, 0.5, d1)
    w["dense2_w"] = rng.integers(qp.qmin, qp.qmax + 1, (d1, d2)) * qp.scale
    w["dense2_b"] = rng.uniform(-0.5, 0.5, d2)
    return w


class _Weights:
    """Attribute view used by _weight_codes for arbitrary weight dicts."""

    def __init__(self, d):
        self.__dict__.update(d)
        self.scales = {}


def build_convlstm(config: ConvLSTMConfig | None = None, weights: dict | None = None,
                   seed: int = 0) -> Graph:
    """Conv blocks -> reshape to a sequence -> Scan LSTM -> dense head.

    Each conv layer is Conv2D -> Mul(weight scale) -> BatchNorm -> ReLU -> Quant.
    The head reads the final hidden state. Missing `weights` are drawn from `seed`.
    """
    from .builder import LSTMWeights
    config = config or ConvLSTMConfig()
    shapes = config.layer_shapes()
    weights = weights if weights is not None else random_convlstm_weights(config, seed)
    wv = _Weights(weights)
    g = Graph(name="convlstm")
    g.inputs = [ValueInfo("x", (config.rows, config.cols), config.input_qp.dtype)]
    init = g.initializers
    init["x_scale"] = Tensor(np.float64(config.input_qp.scale))
    nodes = g.nodes
    nodes.append(Node("Reshape", "x_reshape", ["x"], ["x_img"],
                      {"shape": [1, 1, config.rows, config.cols]}))
    nodes.append(Node("Mul", "x_deq", ["x_img", "x_scale"], ["x_img_deq"]))
    prev = "x_img_deq"
    k = config.kernel
    act_qp = config.act_qp
    for idx, (cin, cout, stride) in enumerate(config.layers()):
        p = f"conv{idx}"
        expect = (cout, cin, k, k)
        if np.shape(weights.get(p + "_w")) != expect:
            raise ShapeChainError(f"{p}_w has shape {np.shape(weights.get(p + '_w'))}, "
                                  f"expected {expect}")
        codes, scale = _weight_codes(wv, p + "_w", config.weight_qp)
        init[p + "_w"] = Tensor(codes, config.weight_qp.dtype)
        init[p + "_scale"] = Tensor(np.float64(scale))
        for part in ("gamma", "beta", "mean", "var"):
            arr = np.asarray(weights[f"{p}_{part}"], dtype=np.float64)
            if arr.shape != (cout,):
                raise ShapeChainError(f"{p}_{part} must have shape ({cout},)")
            init[f"{p}_{part}"] = Tensor(arr)
        if stride > 1:
            pads = [1, 1, 1, 1] if k == 3 else [k // 2] * 4
        else:
            pads = [k // 2] * 4
        nodes += [
            Node("Conv2D", p, [prev, p + "_w"], [p + "_acc"],
                 {"strides": [stride, stride], "pads": pads}),
            Node("Mul", p + "_mul", [p + "_acc", p + "_scale"], [p + "_out"]),
            Node("BatchNorm", p + "_bn", [p + "_out", p + "_gamma", p + "_beta",
                                          p + "_mean", p + "_var"], [p + "_bn_out"],
                 {"epsilon": config.bn_epsilon}),
            Node("ReLU", p + "_relu", [p + "_bn_out"], [p + "_relu_out"]),
            Node("Quant", p + "_quant", [p + "_relu_out"], [p + "_q"], act_qp.to_attrs()),
        ]
        prev = p + "_q"
    c, h, w = shapes[-1]
    nodes.append(Node("Reshape", "to_sequence", [prev], ["seq"],
                      {"shape": [h, c * w], "perm": [0, 2, 1, 3]}))
    lstm_w = LSTMWeights(**{n: weights["lstm_" + n] for n in LSTMWeights.tensor_names()})
    lcfg = config.lstm_config()
    lstm_w.check(lcfg.input_size, lcfg.hidden_size)
    body = lstm_body(lcfg, lstm_w, input_dtype=FLOAT)
    H = config.hidden_size
    init["h0"] = Tensor(np.zeros(H))
    init["c0"] = Tensor(np.zeros(H))
    nodes.append(Node("Scan", "lstm_scan", ["h0", "c0", "seq"],
                      ["h_final", "c_final", "h_seq"], {"body": body, "num_scan_inputs": 1}))
    d1, d2 = config.dense
    prev = "h_final"
    for j, (width, relu) in enumerate(((d1, True), (d2, False)), start=1):
        p = f"dense{j}"
        codes, scale = _weight_codes(wv, p + "_w", config.weight_qp)
        init[p + "_w"] = Tensor(codes, config.weight_qp.dtype)
        init[p + "_scale"] = Tensor(np.float64(scale))
        init[p + "_b"] = Tensor(np.asarray(weights[p + "_b"], dtype=np.float64))
        nodes += [Node("MatMul", p, [prev, p + "_w"], [p + "_acc"]),
                  Node("Mul", p + "_mul", [p + "_acc", p + "_scale"], [p + "_out"]),
                  Node("Add", p + "_bias", [p + "_out", p + "_b"], [p + "_z"])]
        prev = p + "_z"
        if relu:
            nodes += [Node("ReLU", p + "_relu", [prev], [p + "_relu_out"]),
                      Node("Quant", p + "_quant", [p + "_relu_out"], [p + "_q"],
                           act_qp.to_attrs())]
            prev = p + "_q"
    nodes.append(Node("Reshape", "logits_out", [prev], ["logits"], {"shape": [d2]}))
    g.outputs = ["logits"]
    return infer_types(g)


@transformation("fold_batchnorm")
def fold_batchnorm(graph: Graph, report: PassReport, ctx) -> None:
    """BatchNorm becomes Mul(s) -> Add(b), s = gamma/sqrt(var+eps), b = beta - mean*s."""
    for bn in list(graph.nodes):
        if bn.op_type != "BatchNorm" or not ctx.alive(bn):
            continue
        vals = [ctx.const(t) for t in bn.inputs[1:5]]
        if any(v is None for v in vals):
            report.diag(f"{bn.name}: statistics are not constant, not folded")
            continue
        gamma, beta, mean, var = (np.asarray(v, dtype=np.float64) for v in vals)
        eps = float(bn.attributes.get("epsilon", 1e-5))
        s = gamma / np.sqrt(var + eps)
        b = beta - mean * s
        rank = len(ctx.shape(bn.inputs[0]))
        shape = (-1,) + (1,) * (rank - 2) if rank >= 2 else (-1,)
        cs = ctx.add_const(bn.name + "_scale", s.reshape(shape))
        cb = ctx.add_const(bn.name + "_shift", b.reshape(shape))
        mid = ctx.fresh(bn.name + "_scaled")
        ctx.replace([bn], [Node("Mul", bn.name + "_mul", [bn.inputs[0], cs], [mid]),
                           Node("Add", bn.name + "_add", [mid, cb], [bn.outputs[0]])])
        report.applied(removed=1, added=2)
