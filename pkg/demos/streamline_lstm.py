"""Build a W8A6 LSTM, streamline it to integer-only form and check nothing changed."""

import numpy as np

from qrnn import (FULL_SCHEDULE, LSTMQuantConfig, build_qcdq_lstm, execute,
                  random_lstm_weights, stats, streamline_pipeline, verify_equivalence)

cfg = LSTMQuantConfig.w8a6(input_size=40, hidden_size=64, seq_len=25)
weights = random_lstm_weights(40, 64, seed=0, weight_qp=cfg.weight_qp)
graph = build_qcdq_lstm(cfg, weights)

before = stats(graph).bodies["lstm_scan"]
print(f"QCDQ body: {before.node_count} nodes, {before.float_op_count} float ops")

streamlined, reports = streamline_pipeline(graph, FULL_SCHEDULE)
for r in reports:
    if r.applications:
        print(f"  iter {r.iteration}: {r.name:<34} x{r.applications}")

after = stats(streamlined).bodies["lstm_scan"]
print(f"streamlined body: {after.node_count} nodes, {after.float_op_count} float ops")
print("body ops:", dict(sorted(after.op_counts.items())))

rep = verify_equivalence(graph, streamlined, n_samples=20)
print(f"20 random INT8 sequences: verdict {'pass' if rep.passed else 'fail'}, "
      f"max abs error {rep.max_abs_error}")

x = np.random.default_rng(1).integers(-128, 128, (25, 40))
h = execute(streamlined, {"x": x})["h_seq"]
print("last hidden state (first 8):", h.values[-1, :8])
