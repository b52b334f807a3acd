"""Construction of the Scan-based QCDQ LSTM layer and its float twin."""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field, fields

import numpy as np

from .errors import ConfigError, DegenerateTensor, InvalidQuantParams
from .inference import infer_types
from .ir import FLOAT, DataType, Graph, Node, Tensor, ValueInfo
from .quant import QuantParams, qcdq_nodes, quant_fused

GATES = ("f", "i", "c", "o")
ACT_SLOTS = ("acc_f", "acc_i", "acc_c", "acc_o", "sig_f", "sig_i", "sig_o",
             "tanh_c", "cell_state", "cell_tanh", "hidden_state")


def qp_from_dict(d: dict, where: str = "quantizer") -> QuantParams:
    if not isinstance(d, dict) or "scale" not in d or "bits" not in d:
        raise ConfigError(f"{where}: expected an object with 'scale' and 'bits'")
    try:
        return QuantParams.from_attrs(d)
    except (InvalidQuantParams, TypeError, ValueError) as e:
        raise ConfigError(f"{where}: {e}") from None


def w8a6_act_qps() -> dict:
    """Default 6-bit activation quantizers.

    Scales use odd denominators so that products and sums of grid values
    never land exactly on a rounding midpoint of the next quantizer.
    """
    sig = QuantParams(1 / 63, 0, 6, signed=False)
    unit = QuantParams(1 / 31, 0, 6, signed=True)
    acc = QuantParams(7 / 31, 0, 6, signed=True)
    qps = {f"acc_{g}": acc for g in GATES}
    qps.update(sig_f=sig, sig_i=sig, sig_o=sig, tanh_c=unit,
               cell_state=unit, cell_tanh=unit, hidden_state=unit)
    return qps


@dataclass
class LSTMQuantConfig:
    input_size: int
    hidden_size: int
    seq_len: int
    weight_qp: QuantParams
    act_qps: dict
    input_qp: QuantParams | None = None

    def __post_init__(self):
        for name in ("input_size", "hidden_size", "seq_len"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or v < 1:
                raise ConfigError(f"{name} must be a positive integer, got {v!r}")
        missing = [s for s in ACT_SLOTS if s not in self.act_qps]
        if missing:
            raise ConfigError(f"missing quantizer slot(s): {', '.join(missing)}")
        extra = sorted(set(self.act_qps) - set(ACT_SLOTS))
        if extra:
            raise ConfigError(f"unknown quantizer slot(s): {', '.join(extra)}")

    @classmethod
    def w8a6(cls, input_size: int = 40, hidden_size: int = 64, seq_len: int = 25,
             integer_input: bool = True) -> "LSTMQuantConfig":
        return cls(input_size, hidden_size, seq_len,
                   weight_qp=QuantParams(1 / 255, 0, 8, signed=True, narrow_range=True),
                   act_qps=w8a6_act_qps(),
                   input_qp=QuantParams(1 / 31, 0, 8, signed=True) if integer_input else None)

    def to_dict(self) -> dict:
        d = {"model": "lstm", "input_size": self.input_size,
             "hidden_size": self.hidden_size, "seq_len": self.seq_len,
             "weight_qp": self.weight_qp.to_attrs(),
             "act_qps": {k: self.act_qps[k].to_attrs() for k in ACT_SLOTS}}
        if self.input_qp is not None:
            d["input_qp"] = self.input_qp.to_attrs()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "LSTMQuantConfig":
        if not isinstance(d, dict):
            raise ConfigError("LSTM config must be a JSON object")
        for key in ("input_size", "hidden_size", "seq_len", "weight_qp", "act_qps"):
            if key not in d:
                raise ConfigError(f"LSTM config is missing {key!r}")
        acts = d["act_qps"]
        if not isinstance(acts, dict):
            raise ConfigError("act_qps must be an object of quantizer slots")
        missing = [s for s in ACT_SLOTS if s not in acts]
        if missing:
            raise ConfigError(f"missing quantizer slot(s): {', '.join(missing)}")
        return cls(d["input_size"], d["hidden_size"], d["seq_len"],
                   qp_from_dict(d["weight_qp"], "weight_qp"),
                   {k: qp_from_dict(v, f"act_qps.{k}") for k, v in acts.items()},
                   qp_from_dict(d["input_qp"], "input_qp") if d.get("input_qp") else None)


@dataclass
class LSTMWeights:
    """Gate parameters; W_* are hidden x input, U_* hidden x hidden, b_* hidden.

    `scales` optionally maps tensor names to their quantization scale; tensors
    without an entry use the config's weight quantizer.
    """
    W_f: np.ndarray
    W_i: np.ndarray
    W_c: np.ndarray
    W_o: np.ndarray
    U_f: np.ndarray
    U_i: np.ndarray
    U_c: np.ndarray
    U_o: np.ndarray
    b_f: np.ndarray
    b_i: np.ndarray
    b_c: np.ndarray
    b_o: np.ndarray
    scales: dict = field(default_factory=dict)

    def __post_init__(self):
        for f in self.tensor_names():
            setattr(self, f, np.asarray(getattr(self, f), dtype=np.float64))

    @staticmethod
    def tensor_names() -> list:
        return [f.name for f in fields(LSTMWeights) if f.name != "scales"]

    def W(self, g):
        return getattr(self, "W_" + g)

    def U(self, g):
        return getattr(self, "U_" + g)

    def b(self, g):
        return getattr(self, "b_" + g)

    @property
    def hidden_size(self) -> int:
        return self.W_f.shape[0]

    @property
    def input_size(self) -> int:
        return self.W_f.shape[1]

    def check(self, input_size: int, hidden_size: int) -> None:
        for g in GATES:
            for name, arr, shape in (("W", self.W(g), (hidden_size, input_size)),
                                     ("U", self.U(g), (hidden_size, hidden_size)),
                                     ("b", self.b(g), (hidden_size,))):
                if arr.shape != shape:
                    raise ConfigError(f"{name}_{g} has shape {arr.shape}, expected {shape}")

    def to_tensors(self) -> dict:
        return {k: Tensor(getattr(self, k)) for k in self.tensor_names()}

    @classmethod
    def from_tensors(cls, tensors: dict) -> "LSTMWeights":
        missing = [k for k in cls.tensor_names() if k not in tensors]
        if missing:
            raise ConfigError(f"weights file is missing {', '.join(missing)}")
        vals = {k: (t.values if isinstance(t, Tensor) else np.asarray(t))
                for k, t in tensors.items() if k in cls.tensor_names()}
        return cls(**vals)


def random_lstm_weights(input_size: int, hidden_size: int, seed: int = 0,
                        weight_qp: QuantParams | None = None,
                        bias_range: float = 1.0) -> LSTMWeights:
    """Weights drawn directly on the `weight_qp` grid; biases stay float."""
    qp = weight_qp or LSTMQuantConfig.w8a6().weight_qp
    rng = np.random.default_rng(seed)
    vals = {}
    for g in GATES:
        vals["W_" + g] = rng.integers(qp.qmin, qp.qmax + 1, (hidden_size, input_size)) * qp.scale
        vals["U_" + g] = rng.integers(qp.qmin, qp.qmax + 1, (hidden_size, hidden_size)) * qp.scale
    for g in GATES:
        vals["b_" + g] = rng.uniform(-bias_range, bias_range, hidden_size)
    return LSTMWeights(**vals)


def quantize_weights(weights: LSTMWeights, qp: QuantParams, per_tensor: bool = True
                     ) -> LSTMWeights:
    """Project every tensor onto a `qp`-shaped grid.

    With `per_tensor` each tensor gets scale max|w| / qmax (recorded in
    ``scales``); otherwise qp.scale is used for all of them. An all-zero
    tensor keeps scale 1 and triggers a DegenerateTensor warning.
    """
    out, scales = {}, {}
    for name in LSTMWeights.tensor_names():
        w = getattr(weights, name)
        if per_tensor:
            peak = float(np.max(np.abs(w))) if w.size else 0.0
            if peak == 0.0:
                warnings.warn(DegenerateTensor(f"{name} is all zero; scale set to 1"),
                              stacklevel=2)
                scale = 1.0
            else:
                scale = peak / qp.qmax
            tqp = QuantParams(scale, qp.zero_point, qp.bits, qp.signed, qp.narrow_range)
        else:
            tqp = qp
        out[name] = quant_fused(w, tqp)
        scales[name] = tqp.scale
    return LSTMWeights(**out, scales=scales)


def _weight_codes(weights: LSTMWeights, name: str, default_qp: QuantParams):
    """(INT codes, scale) for a weight tensor that must sit on its grid."""
    w = getattr(weights, name)
    scale = weights.scales.get(name, default_qp.scale)
    codes = np.round(w / scale)
    if not np.allclose(codes * scale, w, rtol=0, atol=scale * 1e-6):
        raise ConfigError(f"{name} is not on its quantization grid (scale {scale:g}); "
                          "run quantize_weights first")
    qp = default_qp
    if codes.size and (codes.min() < qp.qmin or codes.max() > qp.qmax):
        raise ConfigError(f"{name} codes exceed the {qp.dtype} weight range")
    return codes.astype(np.int64), scale


class _BodyBuilder:
    def __init__(self):
        self.g = Graph(name="lstm_body")

    def const(self, name, value, dtype=FLOAT) -> str:
        self.g.initializers[name] = Tensor(value, dtype)
        return name

    def node(self, op, name, inputs, output, **attrs) -> str:
        self.g.nodes.append(Node(op, name, list(inputs), [output], attrs))
        return output

    def qcdq(self, x, y, qp, prefix) -> str:
        self.g.nodes.extend(qcdq_nodes(x, y, qp, prefix))
        return y


def lstm_body(config: LSTMQuantConfig | None, weights: LSTMWeights, *,
              input_dtype: DataType = FLOAT, quantized: bool = True) -> Graph:
    """Body graph (h_prev, c_prev, x_t) -> (h_t, c_t, h_t).

    With `quantized`, weights are INT codes followed by their scale and a
    QCDQ triple sits at each of the 11 quantization points. An INT
    `input_dtype` means x_t holds input codes rescaled per gate.
    """
    H, I = weights.hidden_size, weights.input_size
    b = _BodyBuilder()
    int_input = quantized and input_dtype.is_int
    state_dtype = FLOAT
    b.g.inputs = [ValueInfo("h_prev", (H,), state_dtype), ValueInfo("c_prev", (H,), state_dtype),
                  ValueInfo("x_t", (I,), input_dtype)]
    acts = config.act_qps if quantized else {}
    if int_input:
        b.const("x_scale", np.float64(config.input_qp.scale))
    gates = {}
    for g in GATES:
        if quantized:
            wdt = config.weight_qp.dtype
            wc, ws = _weight_codes(weights, "W_" + g, config.weight_qp)
            uc, us = _weight_codes(weights, "U_" + g, config.weight_qp)
            b.const(f"W_{g}_T", wc.T.copy(), wdt)
            b.const(f"U_{g}_T", uc.T.copy(), wdt)
            b.const(f"W_{g}_scale", np.float64(ws))
            b.const(f"U_{g}_scale", np.float64(us))
            x = "x_t"
            if int_input:
                x = b.node("Mul", f"x_deq_{g}", ["x_t", "x_scale"], f"x_deq_{g}")
            xw = b.node("MatMul", f"xw_{g}_mm", [x, f"W_{g}_T"], f"xw_{g}_acc")
            xw = b.node("Mul", f"xw_{g}_mul", [xw, f"W_{g}_scale"], f"xw_{g}")
            hu = b.node("MatMul", f"hu_{g}_mm", ["h_prev", f"U_{g}_T"], f"hu_{g}_acc")
            hu = b.node("Mul", f"hu_{g}_mul", [hu, f"U_{g}_scale"], f"hu_{g}")
        else:
            b.const(f"W_{g}_T", weights.W(g).T.copy())
            b.const(f"U_{g}_T", weights.U(g).T.copy())
            xw = b.node("MatMul", f"xw_{g}_mm", ["x_t", f"W_{g}_T"], f"xw_{g}")
            hu = b.node("MatMul", f"hu_{g}_mm", ["h_prev", f"U_{g}_T"], f"hu_{g}")
        pre = b.node("Add", f"pre_{g}_add", [xw, hu], f"pre_{g}")
        b.const(f"b_{g}", weights.b(g).copy())
        z = b.node("Add", f"bias_{g}_add", [pre, f"b_{g}"], f"z_{g}")
        if quantized:
            z = b.qcdq(z, f"acc_{g}_out", acts[f"acc_{g}"], f"acc_{g}")
        act = "Tanh" if g == "c" else "Sigmoid"
        a = b.node(act, f"act_{g}", [z], f"act_{g}_out")
        if quantized:
            slot = "tanh_c" if g == "c" else f"sig_{g}"
            a = b.qcdq(a, f"{g}_gate", acts[slot], slot)
        gates[g] = a
    fc = b.node("Mul", "fc_mul", [gates["f"], "c_prev"], "fc")
    ic = b.node("Mul", "ic_mul", [gates["i"], gates["c"]], "ic")
    c = b.node("Add", "cell_add", [fc, ic], "c_sum")
    if quantized:
        c = b.qcdq(c, "c_t", acts["cell_state"], "cell_state")
    ct = b.node("Tanh", "cell_tanh_act", [c], "cell_tanh_out")
    if quantized:
        ct = b.qcdq(ct, "c_tanh", acts["cell_tanh"], "cell_tanh")
    h = b.node("Mul", "hidden_mul", [gates["o"], ct], "h_pre")
    if quantized:
        h = b.qcdq(h, "h_t", acts["hidden_state"], "hidden_state")
    b.g.outputs = [h, c, h]
    return b.g


def _wrap_scan(body: Graph, seq_len: int, input_size: int, hidden: int,
               input_dtype: DataType, name: str) -> Graph:
    g = Graph(name=name)
    g.inputs = [ValueInfo("x", (seq_len, input_size), input_dtype)]
    g.initializers["h0"] = Tensor(np.zeros(hidden))
    g.initializers["c0"] = Tensor(np.zeros(hidden))
    g.nodes.append(Node("Scan", "lstm_scan", ["h0", "c0", "x"],
                        ["h_final", "c_final", "h_seq"],
                        {"body": body, "num_scan_inputs": 1}))
    g.outputs = ["h_seq"]
    return infer_types(g)


def build_qcdq_lstm(config: LSTMQuantConfig, weights: LSTMWeights) -> Graph:
    """One Scan node whose body is the QCDQ-quantized LSTM cell.

    The graph input ``x`` is (seq_len, input_size): INT codes when the config
    has an input quantizer, FLOAT otherwise. The output ``h_seq`` stacks h_t.
    """
    weights.check(config.input_size, config.hidden_size)
    in_dt = config.input_qp.dtype if config.input_qp is not None else FLOAT
    body = lstm_body(config, weights, input_dtype=in_dt)
    return _wrap_scan(body, config.seq_len, config.input_size, config.hidden_size,
                      in_dt, "qcdq_lstm")


def build_float_lstm(weights: LSTMWeights, seq_len: int) -> Graph:
    """The same topology without any quantizer, FLOAT weights and input."""
    body = lstm_body(None, weights, quantized=False)
    return _wrap_scan(body, seq_len, weights.input_size, weights.hidden_size,
                      FLOAT, "float_lstm")


def load_config(path):
    """LSTMQuantConfig or ConvLSTMConfig from JSON, chosen by its "model" field."""
    from .convlstm import ConvLSTMConfig
    try:
        with open(path, "r", encoding="utf-8") as f:
            doc = json.load(f)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: line {e.lineno} column {e.colno}: {e.msg}") from None
    except OSError as e:
        raise ConfigError(f"cannot read {path}: {e.strerror}") from None
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: config must be a JSON object")
    model = doc.get("model", "lstm")
    if model == "lstm":
        return LSTMQuantConfig.from_dict(doc)
    if model == "convlstm":
        return ConvLSTMConfig.from_dict(doc)
    raise ConfigError(f"{path}: unknown model {model!r} (expected 'lstm' or 'convlstm')")
