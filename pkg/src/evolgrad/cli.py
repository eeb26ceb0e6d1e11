"""Command-line front end.

Exit status is 0 when every check in the run passes, 1 when a check fails
(the report is still written) and 2 for usage or input errors.
"""
from __future__ import annotations

import argparse
import math
import os
import platform
import shlex
import sys
import time
from typing import Sequence

import numpy as np
import scipy

from . import __version__, _backend, presets
from .conditions import SampleRegion, run_checks
from .operator import OperatorFamily, build_operator
from .reports import ConditionReport, VerificationReport, conditions_csv, margins_csv, write_text
from .solver import Grid, SolverConfig, SolverError, evolve, evolve_many, nested_evolve, write_snapshots
from .verify import (
    DEFAULT_EPSILON,
    bakry_residual,
    bernstein_diagnostic,
    gradient_estimate_check,
    gradient_norm_expression,
    max_principle_check,
    necessity_probe,
)

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2
ETA_MODES = {"lambda-min": "lambda-min", "expr": "user-expression", "user-expression": "user-expression"}
DEFAULT_BOX = {1: 8.0, 2: 4.0, 3: 3.0}
DEFAULT_GRID = {1: 321, 2: 161, 3: 61}


class UsageError(Exception):
    pass


def _time_range(text: str) -> tuple[float, float]:
    try:
        lo, hi = (float(v) for v in text.split(":"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected lo:hi, got {text!r}") from None
    if lo > hi:
        raise argparse.ArgumentTypeError("time range must satisfy lo <= hi")
    return lo, hi


def _floats(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _param(text: str) -> tuple[str, str]:
    if "=" not in text:
        raise argparse.ArgumentTypeError(f"expected name=value, got {text!r}")
    k, v = text.split("=", 1)
    return k.strip(), v.strip()


def _c0_arg(text: str):
    if text == "auto":
        return text
    try:
        return float(text)
    except ValueError:
        raise argparse.ArgumentTypeError("c0 must be a number or 'auto'") from None


def _add_operator_args(p: argparse.ArgumentParser) -> None:
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--preset", help="preset name (see 'presets list')")
    src.add_argument("--spec", help="operator spec document")
    p.add_argument("--param", type=_param, action="append", default=[], metavar="NAME=VALUE",
                   help="preset parameter override (repeatable)")
    p.add_argument("--eta-mode", choices=sorted(ETA_MODES), default=None,
                   help="ellipticity function for c0 (default: the preset's choice, else lambda-min)")
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--out", help="output directory")


def _add_grid_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--box", type=float, help="half-width R of the box")
    p.add_argument("--grid", type=int, help="points per axis (odd, >= 5)")
    p.add_argument("--center", type=_floats, help="box center, comma separated")


def _add_solver_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--f", required=True, help="initial datum as a formula in x1..xd")
    p.add_argument("--s", type=float, required=True, help="initial time")
    p.add_argument("--T", type=float, required=True, help="final time")
    p.add_argument("--scheme", choices=("implicit", "explicit"), default="implicit")
    p.add_argument("--theta", type=float, default=1.0)
    p.add_argument("--dt", type=float)
    p.add_argument("--advection", choices=("upwind", "centered"), default="upwind")
    p.add_argument("--snapshots", type=int, default=10)
    p.add_argument("--inner-fraction", type=float, default=0.5)
    p.add_argument("--backend", choices=sorted(_backend.BACKENDS))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="evolgrad", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"evolgrad {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("check", help="sampled hypothesis checks")
    _add_operator_args(p)
    p.add_argument("--box", type=float, default=2.0)
    p.add_argument("--center", type=_floats)
    p.add_argument("--t", type=_time_range, required=True, metavar="LO:HI")
    p.add_argument("--n-space", type=int, default=11)
    p.add_argument("--n-time", type=int, default=7)
    p.add_argument("--n-random", type=int, default=1000)
    p.add_argument("--tol", type=float, default=1e-10, help="algebraic residual tolerance")

    p = sub.add_parser("solve", help="evolve an initial datum")
    _add_operator_args(p)
    _add_grid_args(p)
    _add_solver_args(p)
    p.add_argument("--radii", type=_floats, help="nested box half-widths sharing the spacing of --box/--grid")

    p = sub.add_parser("verify-gradient", help="check |grad G f| <= exp(c0 (t-s)) G |grad f|")
    _add_operator_args(p)
    _add_grid_args(p)
    _add_solver_args(p)
    p.add_argument("--c0", type=_c0_arg, default="auto")
    p.add_argument("--c0-sweep", type=_floats, help="additional c0 values to test on the same solves")
    p.add_argument("--tol-grad", type=float)
    p.add_argument("--tol-bern", type=float)
    p.add_argument("--epsilon", type=float, default=DEFAULT_EPSILON)
    p.add_argument("--n-random", type=int, default=1000)

    p = sub.add_parser("probe-necessity", help="infer the algebraic tensor from Bakry residuals")
    _add_operator_args(p)
    p.add_argument("--s", type=float, required=True)
    p.add_argument("--point", type=_floats, action="append", required=True, help="probe point (repeatable)")
    p.add_argument("--c", type=float, default=0.0, help="constant in the Bakry residual")
    p.add_argument("--tol", type=float, default=1e-3)

    p = sub.add_parser("presets", help="list or show presets")
    psub = p.add_subparsers(dest="action", required=True)
    psub.add_parser("list")
    show = psub.add_parser("show")
    show.add_argument("name")
    show.add_argument("--param", type=_param, action="append", default=[], metavar="NAME=VALUE")
    return parser


class _Run:
    """Collects reports and output files for one invocation."""

    def __init__(self, args, argv):
        self.args = args
        self.argv = list(argv)
        self.started = time.perf_counter()
        self.conditions: list[ConditionReport] = []
        self.verifications: list[VerificationReport] = []
        self.lines: list[str] = []
        self.files: list[str] = []
        self.op: OperatorFamily | None = None
        self.tolerances: dict[str, float] = {}
        self.out = args.out
        if self.out:
            os.makedirs(self.out, exist_ok=True)

    def say(self, text: str = "") -> None:
        print(text)
        self.lines.append(text)

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.conditions) and all(r.passed for r in self.verifications)

    def path(self, name: str) -> str:
        return os.path.join(self.out, name)

    def finish(self) -> int:
        status = EXIT_OK if self.passed else EXIT_FAIL
        self.say(f"status: {'PASS' if status == EXIT_OK else 'FAIL'}")
        if not self.out:
            return status
        d = self.op.dimension if self.op is not None else 1
        report = "\n".join(self.lines) + "\n\n"
        report += "".join(r.keyvalue() + "\n" for r in self.conditions)
        report += "".join(r.keyvalue() + "\n" for r in self.verifications)
        write_text(self.path("report.txt"), report)
        self.files.append(self.path("report.txt"))
        if self.conditions:
            write_text(self.path("conditions.csv"), conditions_csv(self.conditions, d))
            self.files.append(self.path("conditions.csv"))
        if self.verifications:
            write_text(self.path("margins.csv"), margins_csv(self.verifications, d))
            self.files.append(self.path("margins.csv"))
        self._manifest(status)
        return status

    def _manifest(self, status: int) -> None:
        lines = [
            f"command={' '.join(shlex.quote(a) for a in ['evolgrad', *self.argv])}",
            f"status={status}",
            f"spec_sha256={self.op.spec_hash if self.op is not None else ''}",
            f"seed={getattr(self.args, 'seed', '')}",
            *(f"tol.{k}={v!r}" for k, v in sorted(self.tolerances.items())),
            f"version.evolgrad={__version__}",
            f"version.numpy={np.__version__}",
            f"version.scipy={scipy.__version__}",
            f"version.python={platform.python_version()}",
            f"backend={_backend.NAME if getattr(self.args, 'backend', None) is None else self.args.backend}",
            f"wall_clock_seconds={time.perf_counter() - self.started:.3f}",
            *(f"file={os.path.relpath(p, self.out)}" for p in self.files),
            "file=manifest.txt",
        ]
        write_text(self.path("manifest.txt"), "\n".join(lines) + "\n")


def _load_operator(args) -> tuple[OperatorFamily, str]:
    params = dict(args.param)
    if args.preset:
        op = presets.build(args.preset, params)
        default_eta = presets.get(args.preset).eta_mode
    else:
        if params:
            raise UsageError("--param applies to presets only")
        with open(args.spec, encoding="utf-8") as fh:
            op = build_operator(fh.read())
        default_eta = "user-expression" if op.eta is not None else "lambda-min"
    eta_mode = ETA_MODES[args.eta_mode] if args.eta_mode else default_eta
    return op, eta_mode


def _grid(args, op: OperatorFamily) -> Grid:
    d = op.dimension
    R = args.box if args.box is not None else DEFAULT_BOX.get(d, 2.0)
    n = args.grid if args.grid is not None else DEFAULT_GRID.get(d, 21)
    return Grid(d, R, n, args.center)


def _config(args) -> SolverConfig:
    return SolverConfig(scheme=args.scheme, theta=args.theta, dt=args.dt, advection=args.advection,
                        n_snapshots=args.snapshots, inner_fraction=args.inner_fraction, backend=args.backend)


def _condition_table(run: _Run) -> None:
    run.say(f"{'condition':<12} {'result':<6} {'extremal':>24}  witness (t; x)")
    for r in run.conditions:
        x = ", ".join(f"{v:.6g}" for v in r.witness_x) if r.witness_x is not None else ""
        t = f"{r.witness_t:.6g}" if r.witness_t is not None else ""
        run.say(f"{r.condition:<12} {'PASS' if r.passed else 'FAIL':<6} {r.extremal:>24.17g}  ({t}; {x})")


def _verification_line(run: _Run, r: VerificationReport, label: str | None = None) -> None:
    x = ", ".join(f"{v:.6g}" for v in r.witness_x) if r.witness_x is not None else ""
    t = f"{r.witness_t:.6g}" if r.witness_t is not None else ""
    run.say(f"{label or r.kind:<24} {'PASS' if r.passed else 'FAIL':<6} worst_margin={r.worst_margin:.6g} "
            f"tol={r.tol:.3g} at ({t}; {x})")


def cmd_check(args, run: _Run) -> None:
    op, eta_mode = _load_operator(args)
    run.op = op
    lo, hi = args.t
    if not (op.contains_time(lo) and op.contains_time(hi)):
        raise UsageError(f"--t {lo}:{hi} is outside the operator interval ({op.t_lo}, {op.t_hi}]")
    region = SampleRegion.cube(args.box, args.t, op.dimension, n_space=args.n_space, n_time=args.n_time,
                               n_random=args.n_random, seed=args.seed, center=args.center)
    run.tolerances["algebraic"] = args.tol
    run.conditions += run_checks(op, region, eta_mode, tol=args.tol)
    if op.lyapunov is None:
        run.say("note: no Lyapunov function in the operator document; lyapunov check skipped")
    _condition_table(run)


def cmd_solve(args, run: _Run) -> None:
    op, _ = _load_operator(args)
    run.op = op
    f = op.parse(args.f)
    config = _config(args)
    grid = _grid(args, op)
    if args.radii:
        nested = nested_evolve(op, f, args.s, args.T, args.radii, grid.h, config, args.center)
        traj = nested.trajectory
        run.say("nested boxes " + ", ".join(f"{r:g}" for r in args.radii) + f" with h={grid.h:.6g}")
        for row in nested.table_rows():
            run.say("  t={:.6g}  ".format(row[0]) + "  ".join(f"{v:.3e}" for v in row[1:]))
        if run.out:
            rows = ["time," + ",".join(f"diff{k + 1}" for k in range(len(args.radii) - 1))]
            rows += [",".join(f"{v:.17g}" for v in row) for row in nested.table_rows()]
            write_text(run.path("convergence.csv"), "\n".join(rows) + "\n")
            run.files.append(run.path("convergence.csv"))
    else:
        traj = evolve(op, f, args.s, args.T, grid, config)
    run.say(f"grid: R={traj.grid.half_width:g} n={traj.grid.n} h={traj.grid.h:.6g}; steps={traj.steps} sweeps={traj.sweeps}")
    mp = max_principle_check(traj)
    run.verifications.append(mp)
    run.tolerances["max_principle"] = mp.tol
    _verification_line(run, mp)
    if run.out:
        run.files += write_snapshots(traj, run.path("snapshots"), "u")


def cmd_verify_gradient(args, run: _Run) -> None:
    op, eta_mode = _load_operator(args)
    run.op = op
    f = op.parse(args.f)
    grid = _grid(args, op)
    config = _config(args)
    region = SampleRegion.cube(grid.half_width, (args.s, args.T), op.dimension, n_random=args.n_random,
                               seed=args.seed, center=grid.center)
    run.conditions += run_checks(op, region, eta_mode)
    _condition_table(run)
    if args.c0 == "auto":
        c0 = next(r for r in run.conditions if r.condition == "c0").extremal
        run.say(f"c0 (auto, eta-mode {eta_mode}) = {c0:.17g}")
    else:
        c0 = args.c0
    if not math.isfinite(c0):
        raise UsageError("c0 is not finite")
    gnorm = gradient_norm_expression(f, op.dimension)
    u, v = evolve_many(op, [f, gnorm], args.s, args.T, grid, config)
    run.say(f"grid: R={grid.half_width:g} n={grid.n} h={grid.h:.6g}; steps={u.steps}")
    c0_values = [c0] + [c for c in (args.c0_sweep or ()) if c != c0]
    for c in c0_values:
        rep = gradient_estimate_check(op, f, args.s, args.T, c, grid, config, tol=args.tol_grad, trajectories=(u, v))
        rep.fields = None
        run.verifications.append(rep)
        _verification_line(run, rep, f"gradient c0={c:g}")
    run.tolerances["grad"] = run.verifications[0].tol
    bern = bernstein_diagnostic(op, u, c0, args.epsilon, args.tol_bern, config.inner_fraction)
    run.verifications.append(bern)
    run.tolerances["bern"] = bern.tol
    _verification_line(run, bern)
    for traj, label in ((u, "max-principle u"), (v, "max-principle v")):
        mp = max_principle_check(traj)
        run.verifications.append(mp)
        _verification_line(run, mp, label)
    run.tolerances["max_principle"] = run.verifications[-1].tol
    if run.out:
        run.files += write_snapshots(u, run.path("snapshots"), "u")
        run.files += write_snapshots(v, run.path("snapshots"), "v")


def cmd_probe(args, run: _Run) -> None:
    op, _ = _load_operator(args)
    run.op = op
    run.tolerances["probe"] = args.tol
    for point in args.point:
        if len(point) != op.dimension:
            raise UsageError(f"--point {point} needs {op.dimension} coordinates")
        rep = necessity_probe(op, args.s, point, c=args.c, tol=args.tol)
        run.conditions.append(rep)
        x = ", ".join(f"{v:g}" for v in point)
        run.say(f"necessity at s={args.s:g}, x=({x}): {'PASS' if rep.passed else 'FAIL'} "
                f"max |T| inferred = {rep.extremal:.6g}, symbolic residual = {rep.details['algebraic_residual']:.6g}")
        for key, val in rep.details.items():
            if key.endswith(".inferred") or key.startswith("D"):
                run.say(f"  {key} = {val:.10g}")
        if args.c != 0.0:
            for i in range(op.dimension):
                f = op.parse(f"cos(x{i + 1} - ({point[i]!r}))")
                e = np.eye(op.dimension)[i]
                for k in range(2, 7):
                    vals = [bakry_residual(op, f, args.s, np.asarray(point) + sg * 10.0**-k * e, args.c) for sg in (1, -1)]
                    run.say(f"  bakry i={i + 1} delta=+-1e-{k}: {vals[0]:.6e} {vals[1]:.6e}")
    _condition_table(run)


def cmd_presets(args) -> int:
    if args.action == "list":
        for name in presets.names():
            p = presets.get(name)
            defaults = ", ".join(f"{k}={v}" for k, v in p.defaults.items())
            print(f"{name:<20} {p.summary}  [{defaults}]")
        return EXIT_OK
    p = presets.get(args.name)
    text = presets.instantiate(args.name, dict(args.param))
    print(f"# {p.name}: {p.summary}")
    for line in p.notes.split(". "):
        if line:
            print(f"# {line.rstrip('.')}.")
    expected = ", ".join(f"{k}={'pass' if v else 'fail'}" for k, v in p.expected.items())
    print(f"# expected: {expected}; eta-mode {p.eta_mode}")
    print(text, end="")
    return EXIT_OK


COMMANDS = {"check": cmd_check, "solve": cmd_solve, "verify-gradient": cmd_verify_gradient,
            "probe-necessity": cmd_probe}


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if isinstance(exc.code, int) else EXIT_USAGE
    try:
        if args.command == "presets":
            return cmd_presets(args)
        run = _Run(args, argv)
        COMMANDS[args.command](args, run)
        return run.finish()
    except SolverError as exc:
        print(f"evolgrad: error: {exc}", file=sys.stderr)
        return EXIT_FAIL
    except (UsageError, ValueError, OSError) as exc:
        # ValueError covers spec, preset, expression and probe input errors
        parser.print_usage(sys.stderr)
        print(f"evolgrad: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
