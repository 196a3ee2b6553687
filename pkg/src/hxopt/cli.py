"""Command-line entry point: run / solve / verify.

Exit codes: 0 success, 2 configuration problems (with a line-numbered
message), 3 solver failures.
"""

from __future__ import annotations

import argparse
import os
import sys

from .errors import ConfigError, HxoptError, SolverFailure
from .export import HistoryWriter, export_fields, load_config
from .optimizer import run_optimization
from .problem import build_problem


def _cmd_run(args):
    config = load_config(args.config)
    if args.max_iters is not None:
        config.maxiter = int(args.max_iters)
    if args.snapshot_every is not None:
        config.snapshot_every = int(args.snapshot_every)
    os.makedirs(args.output_dir, exist_ok=True)
    problem = build_problem(config)

    payload0 = problem.solve(problem.initial_phi(), config.da)
    export_fields(
        payload0[1],
        problem.initial_phi(),
        problem.mesh,
        os.path.join(args.output_dir, "snapshot_0000.vtk"),
        chi_h=problem.chi_fields(problem.initial_phi())[0],
    )

    writer = HistoryWriter(os.path.join(args.output_dir, "history.csv"))

    def observer(history, record, phi, payload):
        writer.append(record)
        if config.snapshot_every > 0 and record.iteration % config.snapshot_every == 0:
            export_fields(
                payload[1],
                phi,
                problem.mesh,
                os.path.join(args.output_dir, f"snapshot_{record.iteration:04d}.vtk"),
                chi_h=problem.chi_fields(phi)[0],
            )

    history = run_optimization(problem, problem.optimizer_config(), observer=observer)
    writer.close()
    last = history.records[-1]
    init = history.initial
    print(f"initial: J={init['j']:.6f} G1={init['g1']:.4f} G2={init['g2']:.4f}")
    print(
        f"finished after {last.iteration} iterations ({history.termination}): "
        f"J={last.j:.6f} G1={last.g1:.4f} G2={last.g2:.4f} (bound {config.p_drop})"
    )
    return 0


def _cmd_solve(args):
    config = load_config(args.config)
    os.makedirs(args.output_dir, exist_ok=True)
    problem = build_problem(config)
    payload = problem.solve(problem.initial_phi(), config.da)
    j, g1, g2 = problem.functionals(payload)
    path = export_fields(
        payload[1],
        problem.initial_phi(),
        problem.mesh,
        os.path.join(args.output_dir, "solve.vtk"),
        chi_h=problem.chi_fields(problem.initial_phi())[0],
    )
    print(f"J={j:.6f} G1={g1:.6f} G2={g2:.6f}")
    print(f"fields written to {path}")
    return 0


def _cmd_verify(args):
    from . import verify

    suites = verify.default_suites(fast=args.fast)
    failures = 0
    for name, fn in suites:
        try:
            ok, detail = fn()
        except Exception as exc:  # a crashed suite is a failure, not an abort
            ok, detail = False, f"crashed: {exc}"
        status = "PASS" if ok else "FAIL"
        print(f"{status} {name}: {detail}")
        failures += 0 if ok else 1
    return 0 if failures == 0 else 1


def main(argv=None):
    parser = argparse.ArgumentParser(prog="hxopt", description="Two-fluid heat exchanger level-set design")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="full optimization: history CSV plus periodic snapshots")
    p_run.add_argument("config")
    p_run.add_argument("--output-dir", default="out")
    p_run.add_argument("--max-iters", type=int, default=None)
    p_run.add_argument("--snapshot-every", type=int, default=None)
    p_run.set_defaults(func=_cmd_run)

    p_solve = sub.add_parser("solve", help="forward solve of the initial design")
    p_solve.add_argument("config")
    p_solve.add_argument("--output-dir", default="out")
    p_solve.set_defaults(func=_cmd_solve)

    p_verify = sub.add_parser("verify", help="run the analytic verification suites")
    p_verify.add_argument("--fast", action="store_true", help="coarser meshes, same checks")
    p_verify.set_defaults(func=_cmd_verify)

    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except SolverFailure as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return 3
    except HxoptError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
