import numpy as np
import pytest

from qrnn import (FLOAT, DataType, Graph, LSTMQuantConfig, Node, Tensor, ValueInfo,
                  build_qcdq_lstm, infer_types, random_lstm_weights)


def make_graph(nodes, inputs, outputs, inits=None, name="g", typed=True) -> Graph:
    """Small graph helper. `inputs` is a list of (name, shape, dtype)."""
    g = Graph(name=name,
              inputs=[ValueInfo(n, s, d) for n, s, d in inputs],
              outputs=list(outputs),
              initializers={k: v if isinstance(v, Tensor) else Tensor(v)
                            for k, v in (inits or {}).items()},
              nodes=list(nodes))
    return infer_types(g) if typed else g


def node(op, name, inputs, outputs, **attrs) -> Node:
    if isinstance(outputs, str):
        outputs = [outputs]
    return Node(op, name, list(inputs), list(outputs), attrs)


def count_ops(graph: Graph, op: str) -> int:
    return sum(1 for n in graph.nodes if n.op_type == op)


def scan_body(graph: Graph) -> Graph:
    return next(n.body for n in graph.nodes if n.op_type == "Scan")


INT8 = DataType.int(8, True)


@pytest.fixture(scope="session")
def small_lstm():
    """(config, weights, graph) for a quick 5-in, 4-hidden, 6-step W8A6 LSTM."""
    cfg = LSTMQuantConfig.w8a6(input_size=5, hidden_size=4, seq_len=6)
    w = random_lstm_weights(5, 4, seed=3, weight_qp=cfg.weight_qp)
    return cfg, w, build_qcdq_lstm(cfg, w)


@pytest.fixture(scope="session")
def full_lstm():
    """The case-study sized W8A6 LSTM: input 40, hidden 64, 25 steps."""
    cfg = LSTMQuantConfig.w8a6()
    w = random_lstm_weights(40, 64, seed=11, weight_qp=cfg.weight_qp)
    return cfg, w, build_qcdq_lstm(cfg, w)


def int_sequence(rng, cfg, dtype=INT8) -> np.ndarray:
    return rng.integers(dtype.min, dtype.max + 1, size=(cfg.seq_len, cfg.input_size))


__all__ = ["make_graph", "node", "count_ops", "scan_body", "INT8", "FLOAT", "int_sequence"]


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    if mod is not None and mod.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in mod.RESULTS:
            terminalreporter.write_line(line)
