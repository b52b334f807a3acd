import math

import numpy as np
import pytest
from conftest import FLOAT, INT8, count_ops, make_graph, node, scan_body

from qrnn import (DataType, Graph, Node, Tensor, ValueInfo, deserialize, execute, find_pattern,
                  infer_types, replace_chain, serialize, stats, topo_sort, validate)
from qrnn.errors import CycleDetected, ParseError, RewireMismatch, SchemaVersionError
from qrnn.inference import matmul_accumulator
from qrnn.quant import QuantParams, qcdq_nodes


def qcdq_graph(extra_clip_consumer=False):
    qp = QuantParams(0.5, 0, 4)
    nodes = qcdq_nodes("x", "y", qp, "q")
    width = 41
    outputs = ["y"]
    if extra_clip_consumer:
        nodes.append(node("Add", "spy", ["q_qc", "q_qc"], "z"))
        outputs.append("z")
    return make_graph(nodes, [("x", (width,), FLOAT)], outputs)


class TestDataType:
    def test_ranges(self):
        assert (DataType.int(6, False).min, DataType.int(6, False).max) == (0, 63)
        assert (INT8.min, INT8.max) == (-128, 127)
        assert str(DataType.int(3, False)) == "UINT3"
        assert FLOAT.min == -math.inf

    def test_bad_width(self):
        with pytest.raises(ValueError):
            DataType.int(0)
        with pytest.raises(ValueError):
            DataType.int(33)

    def test_int_tensor_rejects_out_of_range(self):
        with pytest.raises(ValueError):
            Tensor([200], INT8)
        with pytest.raises(ValueError):
            Tensor([0.5], INT8)


class TestValidate:
    def test_empty_graph_with_input_is_valid(self):
        g = Graph(inputs=[ValueInfo("x", (2,), FLOAT)])
        assert validate(g) == []

    def test_duplicate_producer(self):
        g = make_graph([node("Add", "a", ["x", "x"], "t"), node("Mul", "b", ["x", "x"], "t")],
                       [("x", (2,), FLOAT)], ["t"], typed=False)
        kinds = [v.kind for v in validate(g)]
        assert kinds == ["DuplicateProducer"]

    def test_unresolved_input_and_output(self):
        g = make_graph([node("Add", "a", ["x", "ghost"], "t")],
                       [("x", (2,), FLOAT)], ["nowhere"], typed=False)
        kinds = sorted(v.kind for v in validate(g))
        assert kinds == ["UnresolvedInput", "UnresolvedOutput"]

    def test_unknown_op(self):
        g = make_graph([node("Softmax", "s", ["x"], "y")], [("x", (2,), FLOAT)], ["y"],
                       typed=False)
        assert [v.kind for v in validate(g)] == ["UnknownOp"]

    def test_cycle_reported(self):
        g = make_graph([node("Add", "a", ["x", "v"], "u"), node("Add", "b", ["u", "x"], "v")],
                       [("x", (2,), FLOAT)], ["v"], typed=False)
        assert "Cycle" in [v.kind for v in validate(g)]

    def test_builder_lstm_is_valid(self, full_lstm):
        assert validate(full_lstm[2]) == []

    def test_body_violations_are_prefixed(self, small_lstm):
        g = small_lstm[2].copy()
        body = scan_body(g)
        body.nodes.append(node("Add", "dup", ["h_prev", "h_prev"], body.nodes[0].outputs[0]))
        vs = validate(g)
        assert vs and all(v.subject.startswith("lstm_scan/") for v in vs)


class TestTopoSort:
    def test_chain_in_shuffled_order(self):
        nodes = [node("Add", "C", ["b", "b"], "c"), node("Add", "A", ["x", "x"], "a"),
                 node("Add", "B", ["a", "a"], "b")]
        g = make_graph(nodes, [("x", (1,), FLOAT)], ["c"], typed=False)
        assert [n.name for n in topo_sort(g)] == ["A", "B", "C"]

    def test_name_tie_break(self):
        nodes = [node("Add", "b", ["x", "x"], "u"), node("Add", "a", ["x", "x"], "v")]
        g = make_graph(nodes, [("x", (1,), FLOAT)], ["u", "v"], typed=False)
        assert [n.name for n in topo_sort(g)] == ["a", "b"]

    def test_cycle_raises(self):
        g = make_graph([node("Add", "a", ["x", "v"], "u"), node("Add", "b", ["u", "x"], "v")],
                       [("x", (2,), FLOAT)], ["v"], typed=False)
        with pytest.raises(CycleDetected):
            topo_sort(g)

    def test_lstm_body_order_executes(self, small_lstm):
        body = scan_body(small_lstm[2])
        seen = set(body.input_names) | set(body.initializers)
        for n in topo_sort(body):
            assert all(i in seen for i in n.inputs), n.name
            seen.update(n.outputs)


class TestInferTypes:
    def test_add_float(self):
        g = make_graph([node("Add", "a", ["x", "y"], "z")],
                       [("x", (2,), FLOAT), ("y", (2,), FLOAT)], ["z"])
        assert g.dtype_of("z") == FLOAT and g.shape_of("z") == (2,)

    def test_matmul_accumulator_width(self):
        # brute-force worst case: 104 products of extreme operand values
        ua, w = DataType.int(6, False), DataType.int(8, True)
        worst = max(abs(a * b) for a in (ua.min, ua.max) for b in (w.min, w.max)) * 104
        bits = math.ceil(math.log2(worst + 1)) + 1
        assert bits == 21
        acc = matmul_accumulator(ua, w, 104)
        assert acc == DataType.int(21, True)

    def test_matmul_accumulator_in_graph(self):
        g = make_graph([node("MatMul", "mm", ["x", "W"], "y")],
                       [("x", (1, 104), DataType.int(6, False))], ["y"],
                       {"W": Tensor(np.zeros((104, 3)), INT8)})
        assert g.dtype_of("y") == DataType.int(21, True)
        assert g.shape_of("y") == (1, 3)

    def test_multithreshold_passthrough(self):
        u3 = DataType.int(3, False)
        g = make_graph([node("MultiThreshold", "mt", ["x"], "y",
                             thresholds=np.arange(7.0)[None, :], out_scale=1.0,
                             out_bias=0.0, out_dtype=u3)],
                       [("x", (4,), FLOAT)], ["y"])
        assert g.dtype_of("y") == u3


class TestFindPattern:
    def test_qcdq_chain_matches_once(self):
        chains = find_pattern(qcdq_graph(), ["QuantizeLinear", "Clip", "DequantizeLinear"])
        assert len(chains) == 1 and chains[0].names == ["q_ql", "q_clip", "q_dql"]

    def test_fan_out_blocks_match(self):
        g = qcdq_graph(extra_clip_consumer=True)
        assert find_pattern(g, ["QuantizeLinear", "Clip", "DequantizeLinear"]) == []

    def test_predicates_are_callables(self):
        chains = find_pattern(qcdq_graph(), [lambda n: n.name.endswith("_ql"), "Clip"])
        assert len(chains) == 1

    def test_tanh_quant_instances_in_lstm(self, small_lstm):
        from qrnn import fuse_qcdq_pass
        body = scan_body(fuse_qcdq_pass(small_lstm[2]))
        expected = count_ops(body, "Tanh")
        assert expected == 2
        assert len(find_pattern(body, ["Tanh", "Quant"])) == expected


class TestReplaceChain:
    def test_identity_rewrite(self):
        g = qcdq_graph()
        chain = find_pattern(g, ["QuantizeLinear", "Clip", "DequantizeLinear"])[0]
        g2 = replace_chain(g, chain, [Node(n.op_type, n.name, list(n.inputs), list(n.outputs),
                                           dict(n.attributes)) for n in chain.nodes])
        x = np.linspace(-5, 5, 41) + 0.01
        assert execute(g2, {"x": x})["y"] == execute(g, {"x": x})["y"]

    def test_qcdq_to_quant_drops_two_nodes(self):
        g = qcdq_graph()
        chain = find_pattern(g, ["QuantizeLinear", "Clip", "DequantizeLinear"])[0]
        quant = node("Quant", "q", ["x"], "y", **QuantParams(0.5, 0, 4).to_attrs())
        g2 = replace_chain(g, chain, [quant])
        assert len(g2.nodes) == len(g.nodes) - 2
        x = np.linspace(-5, 5, 41) + 0.01
        np.testing.assert_array_equal(execute(g2, {"x": x})["y"].values,
                                      execute(g, {"x": x})["y"].values)

    def test_missing_output_raises(self):
        g = qcdq_graph()
        chain = find_pattern(g, ["QuantizeLinear", "Clip", "DequantizeLinear"])[0]
        with pytest.raises(RewireMismatch):
            replace_chain(g, chain, [node("Tanh", "t", ["x"], "other")])

    def test_input_graph_untouched(self):
        g = qcdq_graph()
        before = serialize(g)
        chain = find_pattern(g, ["QuantizeLinear", "Clip", "DequantizeLinear"])[0]
        replace_chain(g, chain, [node("Tanh", "t", ["x"], "y")])
        assert serialize(g) == before


class TestStats:
    def test_single_add(self):
        g = make_graph([node("Add", "a", ["x", "x"], "y")], [("x", (2,), FLOAT)], ["y"])
        s = stats(g)
        assert s.op_counts == {"Add": 1} and s.float_op_count == 1

    def test_empty(self):
        s = stats(Graph())
        assert (s.node_count, s.float_op_count, s.param_count) == (0, 0, 0)

    def test_param_count_sums_initializers(self, small_lstm):
        g = small_lstm[2]
        expected = sum(int(np.prod(t.shape)) for t in g.initializers.values())
        expected += sum(int(np.prod(t.shape)) for t in scan_body(g).initializers.values())
        assert stats(g).param_count == expected


class TestSerialize:
    def test_empty_round_trip(self):
        g = Graph()
        assert deserialize(serialize(g)) == g

    def test_lstm_round_trip(self, small_lstm):
        g = small_lstm[2]
        g2 = deserialize(serialize(g))
        assert g2 == g
        assert scan_body(g2) == scan_body(g)

    def test_non_finite_thresholds_survive(self):
        t = np.array([[-np.inf, 0.0, np.inf]])
        g = make_graph([node("MultiThreshold", "mt", ["x"], "y", thresholds=t, out_scale=1.0,
                             out_bias=0.0, out_dtype=DataType.int(2, False))],
                       [("x", (1,), FLOAT)], ["y"])
        g2 = deserialize(serialize(g))
        np.testing.assert_array_equal(g2.nodes[0].attributes["thresholds"], t)

    def test_truncated_stream(self, small_lstm):
        data = serialize(small_lstm[2])
        with pytest.raises(ParseError):
            deserialize(data[: len(data) // 2])

    def test_unknown_schema_version(self):
        import json
        doc = json.loads(serialize(Graph()))
        doc["version"] = 999
        with pytest.raises(SchemaVersionError):
            deserialize(json.dumps(doc))

    def test_serialization_is_deterministic(self, small_lstm):
        assert serialize(small_lstm[2]) == serialize(small_lstm[2].copy())
