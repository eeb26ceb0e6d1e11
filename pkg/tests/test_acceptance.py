"""Acceptance criteria 1-9.

Each test records one PASS/FAIL line that is printed in the terminal
summary.  Tolerances are pinned here; the heavy solves are module-scoped
fixtures shared between criteria.
"""
from __future__ import annotations

import json
import math
import time
from pathlib import Path

import numpy as np
import pytest

from evolgrad import expr, presets
from evolgrad.conditions import SampleRegion, check_algebraic, run_checks
from evolgrad.reports import conditions_csv, margins_csv
from evolgrad.solver import Grid, SolverConfig, evolve, evolve_many
from evolgrad.verify import (
    bakry_residual,
    bernstein_diagnostic,
    gradient_estimate_check,
    gradient_norm_expression,
    max_principle_check,
    necessity_probe,
)

GOLDEN = Path(__file__).parent / "golden" / "wang_sweep.json"

# pinned tolerances
TOL_AUTODIFF = 1e-6
FD_STEP = 1e-5
TOL_HEAT_ERROR = 2e-3
MIN_CONVERGENCE_RATIO = 3.5
TOL_MAX_PRINCIPLE = 1e-6
TOL_ELLIPTICITY = 1e-9
TOL_ALGEBRAIC = 1e-12
TOL_C0 = 1e-9
TOL_LYAPUNOV = 1e-6
TOL_BAKRY = 1e-10
TOL_PROBE = 1e-3
WANG_C0 = (0.0, 1.0, 2.0, 5.0)


# ---------------------------------------------------------------------------
# shared runs


def _gaussian_heat(x, t):
    return (1 + 2 * t) ** -0.5 * np.exp(-x**2 / (2 * (1 + 2 * t)))


def _example41_conditions():
    op = presets.build("example41")
    region = SampleRegion.cube(2.0, (1.0, 2.0), 3)
    return op, run_checks(op, region, eta_mode="user-expression")


def _gradient_runs():
    """Criterion 5 runs: (name, op, u, v, c0, report)."""
    out = []
    e41 = presets.build("example41")
    f = e41.parse("exp(-norm2(x))")
    out.append(("example41", e41, f, 1.0, 1.25, 0.0, Grid(3, 3.0, 61)))
    for name, c0 in (("heat", 0.0), ("ou", -1.0)):
        op = presets.build(name)
        out.append((name, op, op.parse("sin(x1)*exp(-x1^2/8)"), 0.0, 0.5, c0, Grid(1, 8.0, 321)))
    runs = {}
    for name, op, f, s, t_end, c0, grid in out:
        start = time.perf_counter()
        rep = gradient_estimate_check(op, f, s, t_end, c0, grid)
        runs[name] = dict(op=op, c0=c0, report=rep, u=rep.fields[0], v=rep.fields[1],
                          seconds=time.perf_counter() - start)
    return runs


WANG_PROBE_POINT = (2.0, 0.0)


def _wang_runs():
    op = presets.build("wang-counterexample")
    start = time.perf_counter()
    region = SampleRegion.cube(2.0, (1.0, 2.0), 2)
    alg = check_algebraic(op, region)
    probe = necessity_probe(op, 1.0, (1.0, 0.0))
    probe2 = necessity_probe(op, 1.0, WANG_PROBE_POINT)
    # pattern i=j=k=1 test function of the probe at (2, 0)
    f = op.parse("cos(x1 - 2)")
    grid = Grid(2, 3.0, 201, WANG_PROBE_POINT)
    config = SolverConfig(n_snapshots=10)
    u, v = evolve_many(op, [f, gradient_norm_expression(f, 2)], 1.0, 1.01, grid, config)
    sweep = [gradient_estimate_check(op, f, 1.0, 1.01, c0, grid, config, trajectories=(u, v)) for c0 in WANG_C0]
    return dict(op=op, algebraic=alg, probe=probe, probe2=probe2, sweep=sweep, u=u, v=v,
                seconds=time.perf_counter() - start)


@pytest.fixture(scope="module")
def gradient_runs():
    return _gradient_runs()


@pytest.fixture(scope="module")
def wang_runs():
    return _wang_runs()


@pytest.fixture(scope="module")
def heat_runs():
    op = presets.build("heat")
    f = op.parse("exp(-x1^2/2)")
    errors, trajs = {}, {}
    start = time.perf_counter()
    for n in (161, 321, 641):
        grid = Grid(1, 8.0, n)
        traj = evolve(op, f, 0.0, 0.5, grid)
        exact = _gaussian_heat(grid.axes[0], 0.5)
        errors[n] = float(np.max(np.abs(traj.fields[-1].values - exact)[grid.inner_mask(0.5)]))
        trajs[n] = traj
    return dict(errors=errors, trajs=trajs, seconds=time.perf_counter() - start)


# ---------------------------------------------------------------------------
# criterion 1


def _random_coefficient(rng: np.random.Generator, d: int, depth: int) -> str:
    """A random formula in the style of the preset coefficients."""
    xs = [f"x{i}" for i in range(1, d + 1)]
    if depth == 0 or rng.random() < 0.25:
        kind = rng.integers(4)
        if kind == 0:
            return f"{rng.uniform(0.5, 3.0):.3f}"
        if kind == 1:
            return "t"
        if kind == 2:
            return str(rng.choice(xs))
        return "norm2(x)"
    a = _random_coefficient(rng, d, depth - 1)
    b = _random_coefficient(rng, d, depth - 1)
    c = f"{rng.uniform(0.5, 3.0):.3f}"
    xi, xj = rng.choice(xs), rng.choice(xs)
    templates = [
        f"{a} + {b}",
        f"{a} - {b}",
        f"{a} * {b}",
        f"({a})^2",
        f"{c} + ({a})*{xj}^2",
        f"-{c}*{xi}*norm2(x)^{rng.choice(['1', '2', '1.5'])}",
        f"-({a})*{xi}*{xj}",
        f"sin({a})",
        f"cos({a})",
        f"tanh({a})",
        f"exp(-({a})^2)",
        f"sqrt(1 + ({a})^2)",
        f"log(1 + ({a})^2)",
        f"(2 + sin(t))*{a}",
        f"min({c}, 1 + t^2)*{a}",
    ]
    return templates[rng.integers(len(templates))]


def test_criterion_1_autodiff(criterion):
    rec = criterion(1, "symbolic derivatives match central differences on 1000 random pairs")
    with rec.check():
        rng = np.random.default_rng(20240611)
        start = time.perf_counter()
        worst = 0.0
        for _ in range(1000):
            d = int(rng.integers(1, 4))
            node = expr.parse(_random_coefficient(rng, d, 3), d)
            names = ["t", *expr.space_variables(d)]
            v = int(rng.integers(len(names)))
            point = rng.uniform(-2.0, 2.0, size=d + 1)
            sym = expr.evaluate(expr.differentiate(node, names[v]), point[0], point[1:])
            up, down = point.copy(), point.copy()
            up[v] += FD_STEP
            down[v] -= FD_STEP
            fd = (expr.evaluate(node, up[0], up[1:]) - expr.evaluate(node, down[0], down[1:])) / (2 * FD_STEP)
            worst = max(worst, abs(sym - fd) / (1.0 + abs(sym)))
        elapsed = time.perf_counter() - start
        rec.detail = f"worst relative gap {worst:.2e}, {elapsed:.2f} s"
        assert worst <= TOL_AUTODIFF
        assert elapsed < 5.0


# ---------------------------------------------------------------------------
# criterion 2


def test_criterion_2_heat_oracle(criterion, heat_runs):
    rec = criterion(2, "heat solver error vs closed form and second-order convergence")
    with rec.check():
        e = heat_runs["errors"]
        ratios = (e[161] / e[321], e[321] / e[641])
        rec.detail = f"error(n=321) {e[321]:.2e}, ratios {ratios[0]:.2f} {ratios[1]:.2f}, {heat_runs['seconds']:.1f} s"
        assert e[321] <= TOL_HEAT_ERROR
        assert min(ratios) >= MIN_CONVERGENCE_RATIO
        assert heat_runs["seconds"] < 30.0


# ---------------------------------------------------------------------------
# criterion 3


def test_criterion_3_max_principle(criterion, heat_runs, gradient_runs, wang_runs):
    rec = criterion(3, "every preset run satisfies the maximum principle")
    with rec.check():
        block = presets.build("block2d")
        block_run = evolve(block, block.parse("exp(-norm2(x))"), 1.0, 1.25, Grid(2, 3.0, 61))
        trajs = list(heat_runs["trajs"].values()) + [block_run, wang_runs["u"], wang_runs["v"]]
        for run in gradient_runs.values():
            trajs += [run["u"], run["v"]]
        worst = max(max_principle_check(tr).worst_margin for tr in trajs)
        rec.detail = f"{len(trajs)} runs, worst margin {worst:.2e}"
        assert worst <= TOL_MAX_PRINCIPLE


# ---------------------------------------------------------------------------
# criterion 4


def test_criterion_4_example41_hypotheses(criterion):
    rec = criterion(4, "example41 preset hypothesis checks on [-2,2]^3 x [1,2]")
    with rec.check():
        start = time.perf_counter()
        _, reports = _example41_conditions()
        elapsed = time.perf_counter() - start
        ell, alg, c0, lyap = reports
        rec.detail = (f"eta {ell.extremal:.15g}, T {alg.extremal:.1e}, c0 {c0.extremal:.1e} at {c0.witness_x}, "
                      f"lyapunov {lyap.extremal:.12g} at {lyap.witness_x}, {elapsed:.2f} s")
        assert abs(ell.extremal - 1.0) <= TOL_ELLIPTICITY
        assert alg.extremal <= TOL_ALGEBRAIC and alg.passed
        assert c0.eta_mode == "user-expression"
        assert abs(c0.extremal) <= TOL_C0
        assert c0.witness_x == (0.0, 0.0, 0.0)
        assert abs(lyap.extremal - 6.0) <= TOL_LYAPUNOV and lyap.passed
        assert lyap.witness_x == (0.0, 0.0, 0.0)
        assert elapsed < 10.0


# ---------------------------------------------------------------------------
# criterion 5


def test_criterion_5_gradient_estimate(criterion, gradient_runs):
    rec = criterion(5, "gradient estimate holds on example41 (c0=0), heat (c0=0), ou (c0=-1)")
    with rec.check():
        parts = []
        for name, run in gradient_runs.items():
            rep = run["report"]
            parts.append(f"{name} {rep.worst_margin:.2e}/{rep.tol:.2e}")
            assert rep.passed, name
            assert rep.worst_margin <= 5e-3 * rep.params["grad_sup"]
        total = sum(run["seconds"] for run in gradient_runs.values())
        rec.detail = ", ".join(parts) + f", {total:.0f} s"
        assert total < 180.0


# ---------------------------------------------------------------------------
# criterion 6


def test_criterion_6_bernstein(criterion, gradient_runs):
    rec = criterion(6, "Bernstein inequality I <= c0 |grad u|^2 on the criterion 5 runs")
    with rec.check():
        parts = []
        for name, run in gradient_runs.items():
            rep = bernstein_diagnostic(run["op"], run["u"], run["c0"])
            parts.append(f"{name} {rep.worst_margin:.2e}/{rep.tol:.2e}")
            assert rep.passed, name
        rec.detail = ", ".join(parts)


# ---------------------------------------------------------------------------
# criterion 7


def test_criterion_7_bakry_equality(criterion):
    rec = criterion(7, "Bakry residual equality case for heat, f = cos(x1), x = pi/2")
    with rec.check():
        heat = presets.build("heat")
        r = bakry_residual(heat, heat.parse("cos(x1)"), 0.0, (math.pi / 2,), 0.0)
        rec.detail = f"residual {r:.1e}"
        assert abs(r) <= TOL_BAKRY


# ---------------------------------------------------------------------------
# criterion 8


def _golden_record(wang) -> dict:
    first = next(rep for rep in wang["sweep"] if not rep.passed)
    return {
        "c0": first.params["c0"],
        "witness_t": first.witness_t,
        "witness_x1": first.witness_x[0],
        "witness_abs_x2": abs(first.witness_x[1]),
        "worst_margin": first.worst_margin,
        "tol": first.tol,
    }


def test_criterion_8_necessity_chain(criterion, wang_runs):
    rec = criterion(8, "wang-counterexample: algebraic failure, probe D1q11 = 2, gradient estimate violated")
    with rec.check():
        alg, probe = wang_runs["algebraic"], wang_runs["probe"]
        d1q11 = probe.details["D1q11"]
        failing = [rep for rep in wang_runs["sweep"] if rep.worst_margin > rep.tol]
        rec.detail = (f"algebraic {alg.extremal:.6g}, D1q11 {d1q11:.9f}, violations at c0 in "
                      f"{[rep.params['c0'] for rep in failing]}, {wang_runs['seconds']:.0f} s")
        assert not alg.passed and alg.extremal >= 6.0 - 1e-6
        assert abs(d1q11 - 2.0) <= TOL_PROBE
        assert abs(probe.details["T111.inferred"] - probe.details["T111.symbolic"]) <= 3 * TOL_PROBE
        assert abs(wang_runs["probe2"].details["D1q11"] - 4.0) <= TOL_PROBE
        assert failing
        got = _golden_record(wang_runs)
        golden = json.loads(GOLDEN.read_text())
        assert got["c0"] == golden["c0"]
        assert got["witness_t"] == pytest.approx(golden["witness_t"], abs=1e-12)
        assert got["witness_x1"] == pytest.approx(golden["witness_x1"], abs=1e-9)
        assert got["witness_abs_x2"] == pytest.approx(golden["witness_abs_x2"], abs=1e-9)
        assert got["worst_margin"] == pytest.approx(golden["worst_margin"], rel=1e-6)
        assert wang_runs["seconds"] < 180.0


# ---------------------------------------------------------------------------
# criterion 9


def _csv_outputs(gradient, wang, conditions) -> dict[str, str]:
    op41, reports = conditions
    out = {"c4_conditions.csv": conditions_csv(reports, 3)}
    for name, run in gradient.items():
        out[f"c5_{name}_margins.csv"] = margins_csv([run["report"]], run["op"].dimension)
    out["c8_conditions.csv"] = conditions_csv([wang["algebraic"], wang["probe"], wang["probe2"]], 2)
    out["c8_margins.csv"] = margins_csv(wang["sweep"], 2)
    return out


def test_criterion_9_determinism(criterion, gradient_runs, wang_runs):
    rec = criterion(9, "re-running criteria 4, 5, 8 gives byte-identical CSV output")
    with rec.check():
        first = _csv_outputs(gradient_runs, wang_runs, _example41_conditions())
        second = _csv_outputs(_gradient_runs(), _wang_runs(), _example41_conditions())
        differing = sorted(k for k in first if first[k].encode() != second[k].encode())
        rec.detail = f"{len(first)} files compared, {len(differing)} differ"
        assert not differing, differing
