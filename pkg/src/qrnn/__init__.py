"""Compiler and functional simulator for quantized LSTM Scan graphs."""

from .builder import (ACT_SLOTS, GATES, LSTMQuantConfig, LSTMWeights, build_float_lstm,
                      build_qcdq_lstm, load_config, quantize_weights, random_lstm_weights)
from .convlstm import ConvLSTMConfig, build_convlstm, fold_batchnorm, random_convlstm_weights
from .errors import *  # noqa: F401,F403
from .executor import (ExecutionContext, ScanState, execute, execute_scan,
                       reference_lstm_float, reference_quantized_lstm,
                       split_sequence_feeds, unroll_scan)
from .inference import GraphStats, infer_types, stats
from .ir import (FLOAT, DataType, Graph, Node, NodeChain, Tensor, ValueInfo, Violation,
                 find_pattern, replace_chain, topo_sort, validate)
from .passes import (DEFAULT_SCHEDULE, FULL_SCHEDULE, PASSES, PassReport, apply_pass,
                     streamline_pipeline)
from .quant import QuantParams, dequantize, fuse_qcdq_pass, quant_fused, quantize
from .serialize import deserialize, load_graph, save_graph, serialize
from .thresholds import (ActivationKind, MultiThresholdAttrs, convert_quant_to_thresholds_pass,
                         gen_thresholds, multithreshold)
from .verify import EquivalenceReport, verify_equivalence

__version__ = "0.1.0"
