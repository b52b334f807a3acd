"""The ConvLSTM limit-order-book model: 100 snapshots x 40 features -> 3 classes."""

import numpy as np

from qrnn import FULL_SCHEDULE, build_convlstm, execute, stats, streamline_pipeline

graph = build_convlstm(seed=0)
s = stats(graph)
print(f"built: {s.node_count} nodes, {s.param_count:,} parameters")

streamlined, _ = streamline_pipeline(graph, FULL_SCHEDULE)
t = stats(streamlined)
print(f"streamlined: {t.node_count} nodes, {t.float_op_count} float ops left "
      f"(LSTM body: {t.bodies['lstm_scan'].float_op_count})")

x = np.random.default_rng(0).integers(-128, 128, (100, 40))
logits = execute(streamlined, {"x": x})["logits"].values
print("logits:", logits, "-> class", int(np.argmax(logits)))
