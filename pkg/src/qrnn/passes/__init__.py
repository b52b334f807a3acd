"""Streamlining rewrite catalog and the fixpoint driver."""

from ..convlstm import fold_batchnorm
from ..quant import fuse_qcdq_pass
from ..rewrite import PASSES, PassReport, apply_pass
from ..thresholds import convert_quant_to_thresholds_pass
from ..verify import EquivalenceReport, verify_equivalence
from .absorb import (absorb_add_into_multithreshold, absorb_mul_into_multithreshold,
                     absorb_sign_bias_into_multithreshold)
from .integer import move_scale_into_scan, move_scale_out_of_scan, round_and_clip_thresholds
from .moves import (collapse_repeated_add, collapse_repeated_mul, move_add_past_mul,
                    move_linear_past_eltwise_add, move_linear_past_eltwise_mul,
                    move_scalar_add_past_matmul, move_scalar_mul_past_matmul,
                    move_scalar_mul_past_reshape, remove_identity_ops)
from .pipeline import (DEFAULT_MAX_ITERATIONS, DEFAULT_SCHEDULE, EXTRA_SCHEDULE,
                       FRONTEND_SCHEDULE, FULL_SCHEDULE, TABLE_I_SCHEDULE, check_schedule,
                       streamline_pipeline)

__all__ = [
    "PASSES", "PassReport", "apply_pass", "EquivalenceReport", "verify_equivalence",
    "fuse_qcdq_pass", "fold_batchnorm", "convert_quant_to_thresholds_pass",
    "move_add_past_mul", "move_scalar_add_past_matmul", "move_scalar_mul_past_matmul",
    "move_linear_past_eltwise_mul", "move_linear_past_eltwise_add",
    "collapse_repeated_add", "collapse_repeated_mul", "remove_identity_ops",
    "move_scalar_mul_past_reshape", "absorb_add_into_multithreshold",
    "absorb_mul_into_multithreshold", "absorb_sign_bias_into_multithreshold",
    "round_and_clip_thresholds", "move_scale_out_of_scan", "move_scale_into_scan",
    "streamline_pipeline", "check_schedule", "TABLE_I_SCHEDULE", "EXTRA_SCHEDULE",
    "DEFAULT_SCHEDULE", "FRONTEND_SCHEDULE", "FULL_SCHEDULE", "DEFAULT_MAX_ITERATIONS",
]
