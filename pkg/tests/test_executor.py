import numpy as np
import pytest
from conftest import FLOAT, INT8, int_sequence, make_graph, node, scan_body

from qrnn import (DataType, ExecutionContext, Graph, LSTMQuantConfig, LSTMWeights, QuantParams,
                  Tensor, ValueInfo, build_float_lstm, build_qcdq_lstm, execute, execute_scan,
                  infer_types, quant_fused, random_lstm_weights, reference_lstm_float,
                  reference_quantized_lstm, split_sequence_feeds, unroll_scan)
from qrnn.errors import (BodySignatureMismatch, IntegerOverflow, MissingFeed, ShapeMismatch,
                         StepBudgetExceeded)
from qrnn.executor import conv2d
from qrnn.quant import qcdq_nodes


def cumsum_graph(n=3):
    body = infer_types(Graph("body", inputs=[ValueInfo("s", (), FLOAT), ValueInfo("x", (), FLOAT)],
                             outputs=["s2", "s2"], nodes=[node("Add", "acc", ["s", "x"], "s2")]))
    scan = node("Scan", "scan", ["s0", "seq"], ["final", "stacked"], body=body,
                num_scan_inputs=1)
    return make_graph([scan], [("seq", (n,), FLOAT)], ["final", "stacked"],
                      {"s0": np.float64(0.0)})


class TestExecute:
    def test_add(self):
        g = make_graph([node("Add", "a", ["x", "y"], "z")],
                       [("x", (2,), FLOAT), ("y", (2,), FLOAT)], ["z"])
        out = execute(g, {"x": np.array([1.0, 2.0]), "y": np.array([3.0, 4.0])})
        np.testing.assert_array_equal(out["z"].values, [4.0, 6.0])

    def test_qcdq_chain(self):
        qp = QuantParams(0.5, 0, 4)
        g = make_graph(qcdq_nodes("x", "y", qp, "q"), [("x", (1,), FLOAT)], ["y"])
        assert execute(g, {"x": np.array([0.3])})["y"].values[0] == 0.5
        assert quant_fused(0.3, qp) == 0.5

    def test_identity_conv(self):
        w = np.zeros((3, 3, 1, 1))
        w[np.arange(3), np.arange(3)] = 1.0
        g = make_graph([node("Conv2D", "c", ["x", "w"], "y", strides=[1, 1], pads=[0, 0, 0, 0])],
                       [("x", (1, 3, 4, 5), FLOAT)], ["y"], {"w": w})
        x = np.random.default_rng(0).normal(size=(1, 3, 4, 5))
        np.testing.assert_array_equal(execute(g, {"x": x})["y"].values, x)

    def test_conv_matches_naive_loops(self):
        rng = np.random.default_rng(1)
        x, w = rng.normal(size=(1, 2, 6, 5)), rng.normal(size=(3, 2, 3, 3))
        got = conv2d(x, w, (2, 1), (1, 1, 1, 1))
        xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
        ho, wo = (6 + 2 - 3) // 2 + 1, (5 + 2 - 3) // 1 + 1
        ref = np.zeros((1, 3, ho, wo))
        for o in range(3):
            for i in range(ho):
                for j in range(wo):
                    ref[0, o, i, j] = np.sum(xp[0, :, 2 * i:2 * i + 3, j:j + 3] * w[o])
        np.testing.assert_allclose(got, ref, rtol=1e-12, atol=1e-12)

    def test_integer_matmul_stays_integer(self):
        g = make_graph([node("MatMul", "mm", ["x", "W"], "y")], [("x", (1, 3), INT8)], ["y"],
                       {"W": Tensor(np.array([[1], [-2], [3]]), INT8)})
        y = execute(g, {"x": np.array([[127, -128, 5]])})["y"]
        assert y.dtype.is_int and y.values.dtype.kind == "i"
        assert y.values[0, 0] == 127 + 256 + 15

    def test_missing_feed(self):
        g = make_graph([node("Add", "a", ["x", "y"], "z")],
                       [("x", (2,), FLOAT), ("y", (2,), FLOAT)], ["z"])
        with pytest.raises(MissingFeed, match="'y'"):
            execute(g, {"x": np.zeros(2)})

    def test_wrong_shape(self):
        g = make_graph([node("Add", "a", ["x", "x"], "z")], [("x", (2,), FLOAT)], ["z"])
        with pytest.raises(ShapeMismatch):
            execute(g, {"x": np.zeros(3)})

    def test_int_feed_out_of_range(self):
        g = make_graph([node("Add", "a", ["x", "x"], "z")], [("x", (1,), INT8)], ["z"])
        with pytest.raises(ShapeMismatch, match="INT8"):
            execute(g, {"x": np.array([300])})

    def test_overflow_is_loud(self):
        g = make_graph([node("MultiThreshold", "mt", ["x"], "y", thresholds=np.array([[0., 1., 2.]]),
                             out_scale=1.0, out_bias=0.0, out_dtype=DataType.int(1, False))],
                       [("x", (1,), FLOAT)], ["y"])
        with pytest.raises(IntegerOverflow):
            execute(g, {"x": np.array([5.0])})

    def test_step_budget(self, small_lstm):
        cfg, _, g = small_lstm
        x = np.zeros((cfg.seq_len, cfg.input_size), dtype=int)
        with pytest.raises(StepBudgetExceeded):
            execute(g, {"x": x}, step_budget=50)

    def test_deterministic(self, small_lstm):
        cfg, _, g = small_lstm
        x = int_sequence(np.random.default_rng(2), cfg)
        assert execute(g, {"x": x})["h_seq"] == execute(g, {"x": x})["h_seq"]

    def test_trace_records_every_node(self):
        g = make_graph([node("Add", "a", ["x", "x"], "u"), node("Mul", "m", ["u", "x"], "v")],
                       [("x", (2,), FLOAT)], ["v"])
        ctx = ExecutionContext(trace=True)
        execute(g, {"x": np.array([1.0, 2.0])}, context=ctx)
        names = [name for _, rec in ctx.records for name in rec]
        assert names == ["u", "v"]


class TestScan:
    def test_cumulative_sum(self):
        out = execute(cumsum_graph(), {"seq": np.array([1.0, 2.0, 3.0])})
        assert out["final"].values == 6.0
        np.testing.assert_array_equal(out["stacked"].values, [1.0, 3.0, 6.0])

    def test_execute_scan_directly(self):
        g = cumsum_graph()
        states, stacked = execute_scan(g.nodes[0], [np.float64(0.0), np.array([1.0, 2.0, 3.0])])
        assert states[0] == 6.0
        np.testing.assert_array_equal(stacked[0], [1.0, 3.0, 6.0])

    def test_single_step_is_one_body_run(self):
        g = cumsum_graph(1)
        states, stacked = execute_scan(g.nodes[0], {"s0": np.float64(2.0), "seq": np.array([5.0])})
        assert states[0] == 7.0 and stacked[0].tolist() == [7.0]

    def test_body_signature_mismatch(self):
        g = cumsum_graph()
        with pytest.raises(BodySignatureMismatch):
            execute_scan(g.nodes[0], [np.float64(0.0), np.float64(0.0), np.zeros(3)])

    def test_stacked_entry_equals_body_output(self, small_lstm):
        cfg, _, g = small_lstm
        x = int_sequence(np.random.default_rng(3), cfg)
        ctx = ExecutionContext(trace=True)
        stacked = execute(g, {"x": x}, context=ctx)["h_seq"].values
        h_t = scan_body(g).outputs[2]
        for t in range(cfg.seq_len):
            rec = {name: v for path, tensors in ctx.records
                   if path.startswith(f"lstm_scan[{t}]/") for name, v in tensors.items()}
            np.testing.assert_array_equal(rec[h_t].values, stacked[t])

    def test_unrolled_graph_matches(self, small_lstm):
        cfg, _, g = small_lstm
        un = unroll_scan(g)
        assert not any(n.op_type == "Scan" for n in un.nodes)
        rng = np.random.default_rng(4)
        for _ in range(3):
            feeds = {"x": int_sequence(rng, cfg)}
            np.testing.assert_array_equal(
                execute(un, split_sequence_feeds(g, feeds))["h_seq"].values,
                execute(g, feeds)["h_seq"].values)


class TestOracles:
    def _zero(self, i, h):
        return LSTMWeights(**{n: np.zeros(s) for n, s in zip(
            LSTMWeights.tensor_names(), [(h, i)] * 4 + [(h, h)] * 4 + [(h,)] * 4)})

    def test_float_zero_weights(self):
        h = reference_lstm_float(self._zero(3, 2), np.ones((4, 3)))
        np.testing.assert_array_equal(h, 0.0)

    def test_saturated_gates(self):
        w = self._zero(1, 1)
        w.b_f[:], w.b_i[:], w.b_o[:] = 10.0, 10.0, 10.0
        h = reference_lstm_float(w, np.random.default_rng(0).normal(size=(10, 1)))
        assert np.max(np.abs(h)) <= 1e-4

    def test_float_graph_matches_loop(self):
        rng = np.random.default_rng(5)
        for seed in range(5):
            w = random_lstm_weights(4, 3, seed=seed)
            g = build_float_lstm(w, seq_len=7)
            x = rng.normal(size=(7, 4))
            got = execute(g, {"x": x})["h_seq"].values
            ref = reference_lstm_float(w, x)
            assert np.max(np.abs(got - ref)) <= 1e-12 * np.max(np.abs(ref))

    def test_float_oracle_shape_check(self):
        with pytest.raises(ShapeMismatch):
            reference_lstm_float(self._zero(3, 2), np.ones((4, 2)))

    def test_quantized_zero_weights(self):
        cfg = LSTMQuantConfig.w8a6(3, 2, 4)
        x = np.random.default_rng(0).integers(-128, 128, (4, 3))
        np.testing.assert_array_equal(reference_quantized_lstm(cfg, self._zero(3, 2), x), 0.0)

    def test_quantized_matches_graph(self):
        rng = np.random.default_rng(6)
        for seed in range(5):
            cfg = LSTMQuantConfig.w8a6(6, 5, 4)
            w = random_lstm_weights(6, 5, seed=seed, weight_qp=cfg.weight_qp)
            x = int_sequence(rng, cfg)
            np.testing.assert_array_equal(execute(build_qcdq_lstm(cfg, w), {"x": x})["h_seq"].values,
                                          reference_quantized_lstm(cfg, w, x))

    def test_quantization_error_is_bounded(self):
        # informational: the quantized model tracks the float one within a few steps
        cfg = LSTMQuantConfig.w8a6(6, 5, 8)
        w = random_lstm_weights(6, 5, seed=0, weight_qp=cfg.weight_qp)
        codes = int_sequence(np.random.default_rng(7), cfg)
        hq = reference_quantized_lstm(cfg, w, codes)
        hf = reference_lstm_float(w, codes * cfg.input_qp.scale)
        assert np.max(np.abs(hq - hf)) < 1.0
