import numpy as np
import pytest
from conftest import FLOAT, count_ops, make_graph, node, scan_body
from hypothesis import given, settings
from hypothesis import strategies as st

from qrnn import QuantParams, apply_pass, dequantize, execute, fuse_qcdq_pass, quant_fused, quantize
from qrnn.errors import InvalidQuantParams
from qrnn.quant import qcdq_nodes

INT4 = QuantParams(0.5, 0, 4)


def quant_params():
    return st.builds(
        lambda scale, bits, signed, narrow: QuantParams(scale, 0, bits, signed,
                                                        narrow and signed),
        st.floats(1e-3, 10.0), st.integers(1, 12), st.booleans(), st.booleans())


class TestQuantize:
    @pytest.mark.parametrize("x, q", [(1.0, 2), (1.25, 2), (100.0, 7), (-100.0, -8)])
    def test_int4_examples(self, x, q):
        assert quantize(x, INT4) == q

    def test_half_even_table(self):
        qp = QuantParams(1.0, 0, 8)
        xs = np.array([-2.5, -1.5, -0.5, 0.5, 1.5, 2.5, 3.5])
        np.testing.assert_array_equal(quantize(xs, qp), [-2, -2, 0, 0, 2, 2, 4])

    def test_zero_point_shift(self):
        qp = QuantParams(0.25, 3, 4, signed=False)
        assert quantize(0.0, qp) == 3
        assert quantize(-10.0, qp) == 0

    def test_narrow_range_floor(self):
        qp = QuantParams(1.0, 0, 8, narrow_range=True)
        assert quantize(-1000.0, qp) == -127

    @pytest.mark.parametrize("kwargs", [dict(scale=0.0), dict(scale=-1.0), dict(scale=np.inf),
                                        dict(scale=1.0, bits=0), dict(scale=1.0, bits=33),
                                        dict(scale=1.0, zero_point=200),
                                        dict(scale=1.0, signed=False, narrow_range=True)])
    def test_invalid_params(self, kwargs):
        with pytest.raises(InvalidQuantParams):
            QuantParams(**kwargs)


class TestDequantize:
    def test_example(self):
        assert dequantize(2, INT4) == 1.0

    def test_zero_point_maps_to_zero(self):
        qp = QuantParams(0.3, 5, 4, signed=False)
        assert dequantize(5, qp) == 0.0


class TestQuantFused:
    def test_example(self):
        assert quant_fused(0.3, INT4) == 0.5

    def test_matches_composition(self):
        xs = np.linspace(-6, 6, 1001)
        np.testing.assert_array_equal(quant_fused(xs, INT4), dequantize(quantize(xs, INT4), INT4))

    @settings(max_examples=200, deadline=None)
    @given(quant_params(), st.lists(st.floats(-1e4, 1e4), min_size=1, max_size=20))
    def test_idempotent(self, qp, xs):
        once = quant_fused(np.array(xs), qp)
        np.testing.assert_array_equal(quant_fused(once, qp), once)

    @settings(max_examples=200, deadline=None)
    @given(quant_params(), st.lists(st.floats(-1e4, 1e4), min_size=2, max_size=20))
    def test_monotone_and_bounded(self, qp, xs):
        xs = np.sort(np.array(xs))
        y = quant_fused(xs, qp)
        assert np.all(np.diff(y) >= 0)
        assert y.min() >= qp.min_value and y.max() <= qp.max_value

    @settings(max_examples=200, deadline=None)
    @given(quant_params(), st.floats(-1e3, 1e3))
    def test_error_within_half_step_inside_range(self, qp, x):
        if qp.min_value <= x <= qp.max_value:
            assert abs(float(quant_fused(x, qp)) - x) <= qp.scale / 2 * (1 + 1e-12)


def _qcdq_chain_graph(n_chains: int, width: int = 8):
    qps = [QuantParams(1 / 31, 0, 6), QuantParams(1 / 63, 0, 6, signed=False),
           QuantParams(7 / 31, 0, 6), QuantParams(1 / 255, 0, 8, narrow_range=True)]
    nodes, x = [], "x"
    for i in range(n_chains):
        y = f"y{i}"
        nodes += qcdq_nodes(x, y, qps[i % len(qps)], f"c{i}")
        x = y
    return make_graph(nodes, [("x", (width,), FLOAT)], [x])


class TestFuseQcdq:
    def test_eleven_chains(self):
        g = _qcdq_chain_graph(11)
        out = fuse_qcdq_pass(g)
        assert count_ops(out, "Quant") == 11
        assert len(g.nodes) - len(out.nodes) == 22

    def test_fusion_is_exact(self):
        g = _qcdq_chain_graph(4)
        out = fuse_qcdq_pass(g)
        rng = np.random.default_rng(0)
        for _ in range(20):
            x = rng.uniform(-3, 3, 8)
            np.testing.assert_array_equal(execute(out, {"x": x})["y3"].values,
                                          execute(g, {"x": x})["y3"].values)

    def test_no_chain_unchanged(self):
        g = make_graph([node("Tanh", "t", ["x"], "y")], [("x", (2,), FLOAT)], ["y"])
        out, rep = apply_pass("fuse_qcdq", g)
        assert out is g and rep.applications == 0

    def test_mismatched_scales_left_alone(self):
        g = _qcdq_chain_graph(1)
        g.nodes[2].attributes["scale"] = 0.5
        out, rep = apply_pass("fuse_qcdq", g)
        assert rep.applications == 0 and rep.diagnostics

    def test_clip_not_a_quantizer_range(self):
        g = _qcdq_chain_graph(1)
        g.nodes[1].attributes["min"] = -5
        _, rep = apply_pass("fuse_qcdq", g)
        assert rep.applications == 0 and "InconsistentQCDQ" in rep.diagnostics[0]

    def test_lstm_body_has_eleven_quantizers(self, small_lstm):
        g = small_lstm[2]
        fused = fuse_qcdq_pass(g)
        assert count_ops(scan_body(fused), "Quant") == 11
        assert count_ops(scan_body(fused), "QuantizeLinear") == 0
