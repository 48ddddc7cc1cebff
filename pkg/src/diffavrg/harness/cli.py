"""Command line entry point: ``diffavrg {run,sweep,topo,refsolve,plot}``.

Exit codes: 0 success, 2 config error, 3 divergence, 4 reference-solve failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from ..diagnostics import fit_linear_rate
from ..diffusion import NetworkState, run
from ..errors import ConvergenceFailure, DivergenceError, InsufficientData, InvalidInput, InvalidParameter
from ..topology import build_topology, metropolis_weights
from ..trace import read_trace_csv
from .config import load_config
from .experiment import SWEEP_COLUMNS, build_problem, spec_from_config, step_size_grid, sweep
from .metrics import CostModel
from .plot import write_svg

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DIVERGED = 3
EXIT_REFERENCE = 4


def _emit(text, path):
    if path:
        Path(path).write_text(text)
    else:
        sys.stdout.write(text)


def _cmd_run(args):
    cfg = load_config(args.config)
    if args.epochs is not None:
        cfg = replace(cfg, algorithm=replace(cfg.algorithm, epochs=args.epochs))
    out_csv = args.out or cfg.output.trace_csv
    problem = build_problem(cfg)
    spec = spec_from_config(cfg)
    net = NetworkState(spec, problem.partition, problem.model, problem.combination)
    a = cfg.algorithm
    try:
        trace = run(
            net,
            problem.w_star,
            epochs=a.epochs,
            tolerance=a.tolerance,
            probe=a.probe,
            t_comp=cfg.costs.t_comp,
            t_comm=cfg.costs.t_comm,
        )
    except DivergenceError as exc:
        if exc.trace is not None:
            _emit(exc.trace.to_csv(), out_csv)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    try:
        trace.rate_fit = fit_linear_rate(trace)
    except InsufficientData:
        pass
    _emit(trace.to_csv(), out_csv)
    if cfg.output.svg:
        write_svg(cfg.output.svg, {spec.variant: (trace.epochs, trace.errors)}, title=spec.variant)
    if cfg.output.checkpoint:
        net.save_checkpoint(cfg.output.checkpoint)
    return EXIT_OK


def _cmd_sweep(args):
    cfg = load_config(args.config)
    problem = build_problem(cfg)
    if args.mu:
        grid = np.asarray(args.mu, dtype=float)
    else:
        grid = step_size_grid(args.mu_min, args.mu_max, args.per_decade)
    batches = args.batch_sizes or [cfg.algorithm.batch_size]
    epochs = args.epochs if args.epochs is not None else cfg.algorithm.epochs
    spec = spec_from_config(cfg)
    rows = sweep(
        problem,
        spec.variant,
        grid,
        epochs,
        batch_sizes=batches,
        cost=CostModel(cfg.costs.t_comp, cfg.costs.t_comm),
        tolerance=cfg.algorithm.tolerance,
        regularizer=spec.regularizer,
        use_weights=spec.use_weights,
        seed=spec.seed,
    )
    buf = _StringWriter()
    writer = csv.DictWriter(buf, fieldnames=SWEEP_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
    _emit(buf.text, args.out)
    return EXIT_OK


class _StringWriter:
    def __init__(self):
        self.parts = []

    def write(self, s):
        self.parts.append(s)

    @property
    def text(self):
        return "".join(self.parts)


def _cmd_topo(args):
    g = build_topology(args.kind, args.nodes, seed=args.seed, p=args.p)
    A = metropolis_weights(g)
    print(f"lambda2 {A.lambda2:.6f}")
    if args.csv:
        A.save_csv(args.csv)
    if args.edges:
        Path(args.edges).write_text(g.to_edge_list())
    return EXIT_OK


def _cmd_refsolve(args):
    cfg = load_config(args.config)
    problem = build_problem(cfg)
    text = json.dumps(problem.reference.to_dict(), indent=2) + "\n"
    _emit(text, args.out)
    return EXIT_OK


def _cmd_plot(args):
    series = {}
    for path in args.traces:
        trace = read_trace_csv(path)
        series[Path(path).stem] = (trace.epochs, trace.errors)
    write_svg(args.out, series, title=args.title or "")
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(prog="diffavrg", description="Decentralized variance-reduced optimization experiments.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run one experiment from a JSON config")
    p.add_argument("--config", required=True)
    p.add_argument("--epochs", type=int)
    p.add_argument("--out", help="trace CSV path (default: config output.trace_csv or stdout)")
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("sweep", help="grid over step sizes and/or batch sizes")
    p.add_argument("--config", required=True)
    p.add_argument("--mu", type=float, nargs="+", help="explicit step sizes")
    p.add_argument("--mu-min", type=float, default=1e-3)
    p.add_argument("--mu-max", type=float, default=1.0)
    p.add_argument("--per-decade", type=int, default=20)
    p.add_argument("--batch-sizes", type=int, nargs="+")
    p.add_argument("--epochs", type=int)
    p.add_argument("--out")
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("topo", help="emit a Metropolis combination matrix and its lambda2")
    p.add_argument("--kind", required=True, choices=("line", "cycle", "complete", "random"))
    p.add_argument("--nodes", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--p", type=float)
    p.add_argument("--csv", help="write the matrix as CSV")
    p.add_argument("--edges", help="write the edge list")
    p.set_defaults(func=_cmd_topo)

    p = sub.add_parser("refsolve", help="solve for the centralized minimizer w*")
    p.add_argument("--config", required=True)
    p.add_argument("--out")
    p.set_defaults(func=_cmd_refsolve)

    p = sub.add_parser("plot", help="trace CSVs to an SVG log-error chart")
    p.add_argument("traces", nargs="+")
    p.add_argument("--out", required=True)
    p.add_argument("--title")
    p.set_defaults(func=_cmd_plot)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConvergenceFailure as exc:
        print(f"error: reference solve failed: {exc}", file=sys.stderr)
        return EXIT_REFERENCE
    except (InvalidInput, InvalidParameter) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
