"""`qrnn` command line: build, transform, run, verify, stats.

Exit codes: 0 success, 1 verification mismatch, 2 usage or configuration
error, 3 validation failure, 4 fixpoint not reached.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from .builder import (LSTMQuantConfig, LSTMWeights, build_qcdq_lstm, load_config,
                      quantize_weights, random_lstm_weights)
from .convlstm import build_convlstm
from .errors import (ConfigError, FixpointNotReached, MissingFeed, ParseError, QrnnError,
                     SchemaVersionError, ShapeMismatch, SignatureMismatch)
from .executor import ExecutionContext, execute
from .inference import stats
from .ir import validate
from .passes import FULL_SCHEDULE, check_schedule, streamline_pipeline
from .serialize import load_graph, save_graph, tensors_from_json, tensors_to_json
from .verify import verify_equivalence

EXIT_OK, EXIT_MISMATCH, EXIT_USAGE, EXIT_INVALID, EXIT_FIXPOINT = 0, 1, 2, 3, 4


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


def _setup_logging() -> None:
    level = os.environ.get("QRNN_LOG", "error").upper()
    if level not in ("ERROR", "INFO", "DEBUG"):
        level = "ERROR"
    logging.basicConfig(level=getattr(logging, level), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")


def _emit(doc, path: str | None = None) -> None:
    text = json.dumps(doc, indent=2, sort_keys=False)
    if path:
        with open(path, "w", encoding="utf-8") as f:
            f.write(text + "\n")
    else:
        print(text)


def _read_graph(path: str):
    if not os.path.isfile(path):
        raise CliError(f"no such graph file: {path}", EXIT_USAGE)
    try:
        g = load_graph(path)
    except ParseError as e:
        raise CliError(f"{path}: {e}", EXIT_USAGE) from None
    except SchemaVersionError as e:
        raise CliError(f"{path}: {e}", EXIT_USAGE) from None
    problems = validate(g)
    if problems:
        raise CliError(f"{path}: graph does not validate: " +
                       "; ".join(f"{v.kind} {v.subject}: {v.message}" for v in problems),
                       EXIT_INVALID)
    return g


def _read_tensors(path: str) -> dict:
    if not os.path.isfile(path):
        raise CliError(f"no such tensor file: {path}", EXIT_USAGE)
    with open(path, "rb") as f:
        try:
            return tensors_from_json(f.read())
        except ParseError as e:
            raise CliError(f"{path}: {e}", EXIT_USAGE) from None


def cmd_build(args) -> int:
    cfg = load_config(args.config)
    if isinstance(cfg, LSTMQuantConfig):
        if args.weights:
            weights = LSTMWeights.from_tensors(_read_tensors(args.weights))
            if args.quantize:
                weights = quantize_weights(weights, cfg.weight_qp, per_tensor=False)
        else:
            weights = random_lstm_weights(cfg.input_size, cfg.hidden_size, args.seed,
                                          cfg.weight_qp)
        g = build_qcdq_lstm(cfg, weights)
    else:
        weights = None
        if args.weights:
            weights = {k: t.values for k, t in _read_tensors(args.weights).items()}
        g = build_convlstm(cfg, weights, seed=args.seed)
    problems = validate(g)
    if problems:
        raise CliError("built graph does not validate: " +
                       "; ".join(v.message for v in problems), EXIT_INVALID)
    save_graph(g, args.output)
    s = stats(g)
    print(f"wrote {args.output}: {s.node_count} nodes, {s.param_count} parameters",
          file=sys.stderr)
    _emit(s.to_dict())
    return EXIT_OK


def _load_schedule(path: str | None) -> list:
    if path is None:
        return list(FULL_SCHEDULE)
    try:
        with open(path, "r", encoding="utf-8") as f:
            doc = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise CliError(f"cannot read schedule {path}: {e}", EXIT_USAGE) from None
    return check_schedule(doc)


def cmd_transform(args) -> int:
    g = _read_graph(args.graph)
    schedule = _load_schedule(args.schedule)
    code = EXIT_OK
    try:
        out, reports = streamline_pipeline(g, schedule, max_iterations=args.max_iterations,
                                           keep_terminal_dequant=args.keep_terminal_dequant)
        fixpoint = True
    except FixpointNotReached as e:
        out, reports, fixpoint = e.graph, e.reports, False
        code = EXIT_FIXPOINT
        print(f"error: {e}", file=sys.stderr)
    save_graph(out, args.output)
    doc = {"fixpoint": fixpoint, "schedule": schedule,
           "reports": [r.to_dict() for r in reports if r.applications or r.diagnostics],
           "stats": stats(out).to_dict()}
    _emit(doc, args.report)
    return code


def cmd_run(args) -> int:
    g = _read_graph(args.graph)
    feeds = _read_tensors(args.feeds)
    ctx = ExecutionContext(trace=bool(args.trace))
    try:
        outs = execute(g, feeds, context=ctx)
    except (MissingFeed, ShapeMismatch) as e:
        raise CliError(str(e), EXIT_USAGE) from None
    data = tensors_to_json(outs)
    if args.output:
        with open(args.output, "wb") as f:
            f.write(data)
    else:
        sys.stdout.write(data.decode("utf-8") + "\n")
    if args.trace:
        trace = {f"{path}:{name}": t for path, tensors in ctx.records
                 for name, t in tensors.items()}
        with open(args.trace, "wb") as f:
            f.write(tensors_to_json(trace))
    return EXIT_OK


def cmd_verify(args) -> int:
    a, b = _read_graph(args.graph_a), _read_graph(args.graph_b)
    try:
        rep = verify_equivalence(a, b, n_samples=args.samples, seed=args.seed,
                                 rel_tol=args.tol, float_range=tuple(args.float_range))
    except SignatureMismatch as e:
        raise CliError(str(e), EXIT_USAGE) from None
    _emit(rep.to_dict())
    return EXIT_OK if rep.passed else EXIT_MISMATCH


def cmd_stats(args) -> int:
    g = _read_graph(args.graph)
    _emit(stats(g).to_dict())
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="qrnn", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    b = sub.add_parser("build", help="build a quantized graph from a JSON config")
    b.add_argument("config")
    b.add_argument("-o", "--output", required=True)
    b.add_argument("--weights", help="JSON tensor file with the model weights")
    b.add_argument("--quantize", action="store_true",
                   help="project LSTM weights onto the weight quantizer grid first")
    b.add_argument("--seed", type=int, default=42)
    b.set_defaults(fn=cmd_build)

    t = sub.add_parser("transform", help="fuse, convert and streamline a graph")
    t.add_argument("graph")
    t.add_argument("-o", "--output", required=True)
    t.add_argument("--schedule", help="JSON list of pass names (default: full pipeline)")
    t.add_argument("--report", help="write the JSON report here instead of stdout")
    t.add_argument("--max-iterations", type=int, default=32)
    t.add_argument("--keep-terminal-dequant", action="store_true")
    t.set_defaults(fn=cmd_transform)

    r = sub.add_parser("run", help="execute a graph on a feed file")
    r.add_argument("graph")
    r.add_argument("feeds")
    r.add_argument("-o", "--output")
    r.add_argument("--trace", metavar="FILE", help="dump every node output to FILE")
    r.set_defaults(fn=cmd_run)

    v = sub.add_parser("verify", help="compare two graphs on random inputs")
    v.add_argument("graph_a")
    v.add_argument("graph_b")
    v.add_argument("--samples", type=int, default=100)
    v.add_argument("--seed", type=int, default=42)
    v.add_argument("--tol", type=float, default=1e-6)
    v.add_argument("--float-range", type=float, nargs=2, default=[-2.0, 2.0],
                   metavar=("LO", "HI"))
    v.set_defaults(fn=cmd_verify)

    s = sub.add_parser("stats", help="print graph statistics")
    s.add_argument("graph")
    s.set_defaults(fn=cmd_stats)
    return p


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except CliError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.code
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except QrnnError as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
