"""Command-line interface: rcmc {run,validate,bounds,project,synth,convert}."""

from __future__ import annotations

import argparse
import json
import math
import sys

import numpy as np

from . import io
from .analysis import error_report, oracle_basis
from .core import RCMCError, Tolerances, ValidationError
from .propagator import run
from .simplex import project_pi

EXIT_OK, EXIT_INVALID, EXIT_USAGE = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise _UsageError(message)


class _UsageError(Exception):
    pass


def _load(path, tol):
    """Network JSON or matrix text, chosen by content."""
    with open(path) as fh:
        first = fh.read(64).lstrip()
    if first.startswith("{"):
        return io.build_canonical(io.read_network(path), tol=tol)
    return io.read_matrix(path, tol)


def _initial(rm, arg):
    """State identifier, or a file with a full vector."""
    try:
        i = rm.index_of(arg)
    except KeyError:
        try:
            p = io.read_vector(arg)
        except OSError:
            raise _UsageError(f"--initial {arg!r} is neither a state id nor a readable vector file") from None
        if p.shape != (rm.n,):
            raise _UsageError(f"initial vector has {p.size} entries, expected {rm.n}")
        return p
    p = np.zeros(rm.n)
    p[i] = 1.0
    return p


def _tol(args):
    return Tolerances(tol_rel=args.tol_rel)


def cmd_run(args):
    tol = _tol(args)
    rm = _load(args.input, tol)
    p = _initial(rm, args.initial)
    traj = run(rm, p, args.type, args.time_method, args.t_max, tol)
    io.write_trajectory(traj, rm, args.output or sys.stdout)
    return EXIT_OK


def cmd_validate(args):
    tol = _tol(args)
    try:
        rm = _load(args.input, tol)
    except ValidationError as exc:
        print(f"invalid: {type(exc).__name__}", file=sys.stderr)
        for v in exc.violations:
            print(f"  {v}", file=sys.stderr)
        return EXIT_INVALID
    print(json.dumps({"n": rm.n, "nnz": int(rm.K.nnz), "valid": True}))
    return EXIT_OK


def cmd_bounds(args):
    tol = _tol(args)
    rm = _load(args.input, tol)
    if rm.n > args.max_n:
        raise _UsageError(f"bounds needs n <= {args.max_n}, got {rm.n}")
    p = _initial(rm, args.initial)
    traj = run(rm, p, args.type, args.time_method, args.t_max, tol)
    eb = oracle_basis(rm, args.precision_digits)
    rep = error_report(rm, traj, p, eb, workers=io.thread_limit())
    io.write_error_report(rep, args.output or sys.stdout)
    return EXIT_OK


def cmd_project(args):
    w = io.read_vector(args.vector)
    pi = io.read_vector(args.pi)
    if w.shape != pi.shape:
        raise _UsageError("vector and pi differ in length")
    q = project_pi(w, pi).q
    out = "\n".join(io.FMT % x for x in q) + "\n"
    if args.output:
        with open(args.output, "w") as fh:
            fh.write(out)
    else:
        sys.stdout.write(out)
    return EXIT_OK


def cmd_synth(args):
    net = io.synthesize(args.n, args.density, args.energy_spread, args.barrier_spread,
                        args.temperature, args.seed, window=args.window)
    io.write_network(net, args.output)
    return EXIT_OK


def cmd_convert(args):
    tol = _tol(args)
    rm = io.build_canonical(io.read_network(args.input), args.truncation, tol)
    io.write_matrix(rm, args.output)
    return EXIT_OK


def build_parser():
    ap = _Parser(prog="rcmc", description="Rate constant matrix contraction for stiff master equations.")
    ap.add_argument("--tol-rel", type=float, default=1e-10, help="relative validation tolerance")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common_run(p):
        p.add_argument("input", help="network JSON or matrix file")
        p.add_argument("--type", choices=["A", "B"], default="A")
        p.add_argument("--time-method", choices=["diag", "eigen", "gershgorin"], default="gershgorin")
        p.add_argument("--t-max", type=float, default=math.inf)
        p.add_argument("--initial", required=True, help="state id or vector file")
        p.add_argument("-o", "--output")

    p = sub.add_parser("run", help="contract and write the trajectory CSV")
    common_run(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("validate", help="check the rate matrix axioms")
    p.add_argument("input")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("bounds", help="error report against the exact solution")
    common_run(p)
    p.add_argument("--precision-digits", type=int, default=None,
                   help="oracle working digits (default: enough to resolve every mode)")
    p.add_argument("--max-n", type=int, default=512)
    p.set_defaults(func=cmd_bounds)

    p = sub.add_parser("project", help="project a vector onto the simplex in the pi-norm")
    p.add_argument("vector")
    p.add_argument("--pi", required=True)
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_project)

    p = sub.add_parser("synth", help="generate a random kinetic network")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--density", type=float, default=0.3)
    p.add_argument("--energy-spread", type=float, default=100.0, help="kJ/mol")
    p.add_argument("--barrier-spread", type=float, default=50.0, help="kJ/mol")
    p.add_argument("--temperature", type=float, default=300.0)
    p.add_argument("--window", type=int, default=None)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("convert", help="network JSON to matrix text")
    p.add_argument("input")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--truncation", type=float, default=io.TRUNCATION)
    p.set_defaults(func=cmd_convert)
    return ap


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except _UsageError as exc:
        print(f"rcmc: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except RCMCError as exc:
        print(f"rcmc: invalid input: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (ValueError, OSError, KeyError) as exc:
        print(f"rcmc: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
