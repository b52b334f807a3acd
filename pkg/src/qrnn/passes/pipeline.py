"""Fixpoint driver over a schedule of registered passes."""

from __future__ import annotations

import logging

from ..errors import ConfigError, FixpointNotReached
from ..ir import Graph
from ..rewrite import PASSES, apply_pass
from .absorb import KEEP_TERMINAL_DEQUANT

log = logging.getLogger(__name__)

TABLE_I_SCHEDULE = [
    "move_add_past_mul",
    "move_scalar_add_past_matmul",
    "move_scalar_mul_past_matmul",
    "move_linear_past_eltwise_mul",
    "collapse_repeated_add",
    "collapse_repeated_mul",
    "absorb_add_into_multithreshold",
    "absorb_mul_into_multithreshold",
    "absorb_sign_bias_into_multithreshold",
    "round_and_clip_thresholds",
]

# Helpers needed to reach an integer-only body; not part of the classic catalog.
EXTRA_SCHEDULE = [
    "move_linear_past_eltwise_add",
    "remove_identity_ops",
    "move_scale_out_of_scan",
    "move_scalar_mul_past_reshape",
    "move_scale_into_scan",
]

DEFAULT_SCHEDULE = TABLE_I_SCHEDULE + EXTRA_SCHEDULE
FRONTEND_SCHEDULE = ["fuse_qcdq", "fold_batchnorm", "convert_quant_to_thresholds"]
FULL_SCHEDULE = FRONTEND_SCHEDULE + DEFAULT_SCHEDULE

DEFAULT_MAX_ITERATIONS = 32


def check_schedule(schedule) -> list:
    if not isinstance(schedule, (list, tuple)) or not all(isinstance(s, str) for s in schedule):
        raise ConfigError("a schedule is a list of pass names")
    unknown = [s for s in schedule if s not in PASSES]
    if unknown:
        raise ConfigError(f"unknown pass(es) {', '.join(unknown)}; valid passes: "
                          f"{', '.join(sorted(PASSES))}")
    return list(schedule)


def streamline_pipeline(graph: Graph, schedule=None, *,
                        max_iterations: int = DEFAULT_MAX_ITERATIONS,
                        keep_terminal_dequant: bool = False):
    """Run `schedule` repeatedly until no pass fires.

    Returns the final graph and one PassReport per (iteration, pass), with
    the iteration index stored on each report. Raises FixpointNotReached if
    passes are still firing after `max_iterations` rounds.
    """
    schedule = check_schedule(DEFAULT_SCHEDULE if schedule is None else schedule)
    reports = []
    token = KEEP_TERMINAL_DEQUANT.set(keep_terminal_dequant)
    try:
        for it in range(max_iterations):
            fired = 0
            for name in schedule:
                graph, rep = apply_pass(name, graph)
                rep.iteration = it
                reports.append(rep)
                fired += rep.applications
                if rep.applications:
                    log.debug("iteration %d: %s applied %d time(s)", it, name,
                              rep.applications)
            if fired == 0:
                return graph, reports
    finally:
        KEEP_TERMINAL_DEQUANT.reset(token)
    raise FixpointNotReached(
        f"passes still firing after {max_iterations} iterations", graph, reports)
