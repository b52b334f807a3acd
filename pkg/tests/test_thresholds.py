import warnings

import numpy as np
import pytest
from conftest import FLOAT, count_ops, make_graph, node
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from qrnn import (ActivationKind, DataType, MultiThresholdAttrs, QuantParams, apply_pass,
                  convert_quant_to_thresholds_pass, execute, gen_thresholds, multithreshold,
                  quant_fused)
from qrnn.errors import ShapeMismatch, UnreachableLevels
from qrnn.thresholds import apply_activation


def oracle(kind, qp, x):
    return quant_fused(apply_activation(kind, x), qp)


def off_boundary(kind, qp, x, margin=1e-9):
    """Mask of points whose activation value is not within `margin` of a rounding tie."""
    v = (apply_activation(kind, x) / qp.scale) + qp.zero_point
    return np.abs(v - np.floor(v) - 0.5) > margin


class TestMultiThreshold:
    def test_single_zero_threshold(self):
        a = MultiThresholdAttrs([[0.0]])
        np.testing.assert_array_equal(multithreshold(np.array([-1.0, 0.0]), a), [0, 1])

    def test_tanh_int2_example(self):
        a = MultiThresholdAttrs([[-0.9730, -0.2554, 0.2554]], out_scale=0.5, out_bias=-1.0)
        assert multithreshold(0.3, a) == 0.5
        assert multithreshold(0.3, a) == quant_fused(np.tanh(0.3), QuantParams(0.5, 0, 2))

    def test_below_all_thresholds_is_bias(self):
        a = MultiThresholdAttrs([[1.0, 2.0]], out_scale=3.0, out_bias=-0.25)
        assert multithreshold(-50.0, a) == -0.25

    def test_per_channel_rows(self):
        a = MultiThresholdAttrs([[0.0, 1.0], [10.0, 20.0]])
        x = np.array([[0.5, 15.0], [2.0, 25.0]])
        np.testing.assert_array_equal(multithreshold(x, a), [[1, 1], [2, 2]])

    def test_channel_axis_one(self):
        a = MultiThresholdAttrs([[0.0], [5.0]], channel_axis=1)
        x = np.full((1, 2, 2, 2), 1.0)
        out = multithreshold(x, a)
        assert out[0, 0].tolist() == [[1, 1], [1, 1]]
        assert out[0, 1].tolist() == [[0, 0], [0, 0]]

    def test_channel_count_mismatch(self):
        a = MultiThresholdAttrs([[0.0], [1.0], [2.0]])
        with pytest.raises(ShapeMismatch):
            multithreshold(np.zeros((4, 2)), a)

    def test_rows_must_be_sorted(self):
        with pytest.raises(ValueError):
            MultiThresholdAttrs([[1.0, 0.0]])

    def test_integer_output_dtype(self):
        a = MultiThresholdAttrs([[0.0, 1.0, 2.0]], 2.0, -3.0, DataType.int(3, True))
        out = multithreshold(np.array([-1, 0, 1, 2]), a)
        assert out.dtype.kind == "i"
        np.testing.assert_array_equal(out, [-3, -1, 1, 3])


class TestGenThresholds:
    def test_sigmoid_uint1(self):
        a = gen_thresholds(ActivationKind.SIGMOID, QuantParams(1.0, 0, 1, signed=False))
        np.testing.assert_array_equal(a.thresholds, [[0.0]])

    def test_tanh_int2(self):
        a = gen_thresholds(ActivationKind.TANH, QuantParams(0.5, 0, 2))
        np.testing.assert_allclose(a.thresholds, [[-0.9730, -0.2554, 0.2554]], atol=1e-4)
        assert (a.out_scale, a.out_bias) == (0.5, -1.0)

    def test_relu_uint2(self):
        a = gen_thresholds(ActivationKind.RELU, QuantParams(1.0, 0, 2, signed=False))
        np.testing.assert_array_equal(a.thresholds, [[0.5, 1.5, 2.5]])

    def test_string_kind(self):
        a = gen_thresholds("tanh", QuantParams(0.5, 0, 2))
        assert a.levels == 3

    @pytest.mark.parametrize("kind, qp", [
        (ActivationKind.TANH, QuantParams(0.5, 0, 2)),
        (ActivationKind.RELU, QuantParams(1.0, 0, 2, signed=False)),
        (ActivationKind.SIGMOID, QuantParams(1 / 63, 0, 6, signed=False)),
    ])
    def test_brute_force_grid(self, kind, qp):
        x = np.linspace(-4, 4, 100_001)
        keep = off_boundary(kind, qp, x)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", UnreachableLevels)
            a = gen_thresholds(kind, qp)
        np.testing.assert_array_equal(multithreshold(x[keep], a), oracle(kind, qp, x[keep]))

    def test_unreachable_levels_warn(self):
        # tanh never reaches +-1.5, so the outer INT3 levels are unreachable
        with pytest.warns(UnreachableLevels):
            a = gen_thresholds(ActivationKind.TANH, QuantParams(0.5, 0, 3))
        assert np.isinf(a.thresholds).sum() > 0
        x = np.linspace(-5, 5, 2001)
        keep = off_boundary(ActivationKind.TANH, QuantParams(0.5, 0, 3), x)
        np.testing.assert_array_equal(
            multithreshold(x[keep], a), oracle(ActivationKind.TANH, QuantParams(0.5, 0, 3),
                                               x[keep]))

    def test_signed_relu_matches(self):
        qp = QuantParams(0.25, 0, 4)
        with pytest.warns(UnreachableLevels):
            a = gen_thresholds(ActivationKind.RELU, qp)
        x = np.linspace(-3, 3, 6001)
        keep = off_boundary(ActivationKind.RELU, qp, x)
        np.testing.assert_array_equal(multithreshold(x[keep], a),
                                      oracle(ActivationKind.RELU, qp, x[keep]))

    @settings(max_examples=150, deadline=None)
    @given(st.sampled_from(list(ActivationKind)),
           st.floats(1e-3, 2.0), st.integers(1, 7), st.booleans(), st.integers(-3, 3),
           st.lists(st.floats(-8, 8), min_size=1, max_size=32))
    def test_matches_quantized_activation(self, kind, scale, bits, signed, zp, xs):
        qp_lo = 0 if not signed else -(2 ** (bits - 1))
        qp_hi = 2 ** bits - 1 if not signed else 2 ** (bits - 1) - 1
        assume(qp_lo <= zp <= qp_hi)
        qp = QuantParams(scale, zp, bits, signed)
        x = np.array(xs)
        x = x[off_boundary(kind, qp, x, 1e-7)]
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", UnreachableLevels)
            a = gen_thresholds(kind, qp)
        np.testing.assert_allclose(multithreshold(x, a), oracle(kind, qp, x),
                                   rtol=0, atol=1e-12 * max(1.0, scale * 2 ** bits))


def tanh_quant_graph(width=16, qp=QuantParams(0.5, 0, 2), op="Tanh"):
    return make_graph([node(op, "act", ["x"], "a"),
                       node("Quant", "q_quant", ["a"], "y", **qp.to_attrs())],
                      [("x", (width,), FLOAT)], ["y"])


class TestConvertPass:
    def test_tanh_int2_constants(self):
        out = convert_quant_to_thresholds_pass(tanh_quant_graph())
        assert [n.op_type for n in out.nodes] == ["MultiThreshold", "Mul", "Add"]
        mul, add = out.nodes[1], out.nodes[2]
        assert out.initializers[mul.inputs[1]].values == 0.5
        assert out.initializers[add.inputs[1]].values == -1.0
        mt = out.nodes[0].attributes
        np.testing.assert_allclose(mt["thresholds"], [[-0.9730, -0.2554, 0.2554]], atol=1e-4)
        assert mt["out_dtype"] == DataType.int(2, False)

    @pytest.mark.parametrize("op, qp", [("Tanh", QuantParams(0.5, 0, 2)),
                                        ("Sigmoid", QuantParams(1 / 63, 0, 6, signed=False)),
                                        ("ReLU", QuantParams(2 / 31, 0, 6, signed=False))])
    def test_equivalent_on_random_inputs(self, op, qp):
        g = tanh_quant_graph(64, qp, op)
        out = convert_quant_to_thresholds_pass(g)
        rng = np.random.default_rng(5)
        kind = {"Tanh": ActivationKind.TANH, "Sigmoid": ActivationKind.SIGMOID,
                "ReLU": ActivationKind.RELU}[op]
        for _ in range(40):
            x = rng.uniform(-4, 4, 64)
            x = np.where(off_boundary(kind, qp, x), x, 0.123)
            np.testing.assert_array_equal(execute(out, {"x": x})["y"].values,
                                          execute(g, {"x": x})["y"].values)

    def test_bare_quant_uses_identity(self):
        qp = QuantParams(0.25, 0, 4)
        g = make_graph([node("Quant", "q_quant", ["x"], "y", **qp.to_attrs())],
                       [("x", (8,), FLOAT)], ["y"])
        out = convert_quant_to_thresholds_pass(g)
        assert count_ops(out, "Quant") == 0
        x = np.linspace(-3, 3, 8) + 0.01
        np.testing.assert_array_equal(execute(out, {"x": x})["y"].values, quant_fused(x, qp))

    def test_no_quant_unchanged(self):
        g = make_graph([node("Tanh", "t", ["x"], "y")], [("x", (2,), FLOAT)], ["y"])
        out, rep = apply_pass("convert_quant_to_thresholds", g)
        assert out is g and rep.applications == 0

    def test_unreachable_levels_become_diagnostics(self):
        out, rep = apply_pass("convert_quant_to_thresholds",
                              tanh_quant_graph(qp=QuantParams(0.5, 0, 3)))
        assert rep.applications == 1
        assert any("UnreachableLevels" in d or "outside" in d for d in rep.diagnostics)
