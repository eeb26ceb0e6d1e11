"""Checks of the gradient estimate and its companion inequalities.

All margins are (left side - right side), so a non-positive worst margin
means the inequality held at every checked point.  Reported quantities are
restricted to the inner box (fraction ``rho`` of the half-width) to keep the
artificial Dirichlet boundary out of them.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

import numpy as np

from . import expr
from .conditions import algebraic_residual, algebraic_tensor
from .expr import Node, call, const, differentiate, evaluate, evaluate_array, simplify, var
from .operator import OperatorFamily, eval_at, eval_fields, generator_expression
from .reports import ConditionReport, VerificationReport
from .solver import Grid, ScalarField, SolverConfig, Trajectory, evolve_many, gradient_field, hessian_field

__all__ = [
    "BernsteinFields",
    "ProbeError",
    "gradient_norm_expression",
    "gradient_estimate_check",
    "bernstein_fields",
    "bernstein_diagnostic",
    "bakry_residual",
    "necessity_probe",
    "max_principle_check",
    "DEFAULT_EPSILON",
    "MAX_PRINCIPLE_TOL",
]

DEFAULT_EPSILON = 1e-8
MAX_PRINCIPLE_TOL = 1e-6
GRAD_FLOOR = 1e-6
PROBE_STEPS = tuple(10.0 ** -k for k in range(2, 7))
PROBE_EPSILONS = (0.1, 0.03, 0.01)


class ProbeError(ValueError):
    pass


def _inner_mask(grid: Grid, rho: float) -> np.ndarray:
    return grid.inner_mask(rho)


def _argmax_point(values: np.ndarray, mask: np.ndarray, grid: Grid):
    """Largest masked value and its node; the first in C order wins ties."""
    masked = np.where(mask, values, -np.inf)
    flat = int(np.argmax(masked))
    idx = np.unravel_index(flat, grid.shape)
    return float(masked[idx]), grid.coords(idx)


def _reduce_series(kind, series, tol, params, notes=None, fields=None) -> VerificationReport:
    worst, wt, wx = -math.inf, None, None
    for t, m, x in series:
        if m > worst:
            worst, wt, wx = m, t, x
    return VerificationReport(
        kind=kind,
        passed=bool(worst <= tol),
        worst_margin=float(worst),
        witness_t=wt,
        witness_x=wx,
        tol=float(tol),
        series=list(series),
        params=params,
        notes=list(notes or []),
        fields=fields,
    )


@lru_cache(maxsize=128)
def gradient_norm_expression(f: Node, dimension: int) -> Node:
    """Symbolic |grad f| = sqrt(sum (D_i f)^2)."""
    total = expr.ZERO
    for v in expr.space_variables(dimension):
        g = differentiate(f, v)
        total = simplify(total + g * g)
    return simplify(call("sqrt", total))


def gradient_estimate_check(op: OperatorFamily, f: Node, s: float, t_end: float, c0: float, grid: Grid,
                            config: SolverConfig | None = None, tol: float | None = None,
                            trajectories: tuple[Trajectory, Trajectory] | None = None) -> VerificationReport:
    """Check |grad u(t)| <= exp(c0 (t - s)) v(t) with u = G(t,s)f and v = G(t,s)|grad f|.

    ``trajectories`` may carry a precomputed ``(u, v)`` pair so that sweeps
    over ``c0`` reuse one solve.  The default tolerance is
    ``5e-3 * max |grad f|`` over the grid nodes.
    """
    config = config or SolverConfig()
    if not math.isfinite(c0):
        raise ValueError("c0 must be finite")
    gnorm = gradient_norm_expression(f, op.dimension)
    if trajectories is None:
        u, v = evolve_many(op, [f, gnorm], s, t_end, grid, config)
    else:
        u, v = trajectories
        grid = u.grid
    grad_sup = float(np.max(evaluate_array(gnorm, s, grid.mesh())))
    if tol is None:
        tol = 5e-3 * grad_sup
    mask = _inner_mask(grid, config.inner_fraction)
    series = []
    for t, fu, fv in zip(u.times, u.fields, v.fields):
        margin = gradient_field(fu).norm.values - math.exp(c0 * (t - s)) * fv.values
        m, x = _argmax_point(margin, mask, grid)
        series.append((float(t), m, x))
    params = {"c0": float(c0), "s": float(s), "t_end": float(t_end), "rho": config.inner_fraction,
              "R": grid.half_width, "n": grid.n, "h": grid.h, "grad_sup": grad_sup,
              "scheme": config.scheme, "advection": config.advection, "steps": u.steps}
    return _reduce_series("gradient", series, tol, params, fields=(u, v))


@dataclass
class BernsteinFields:
    """Bernstein quantities on one snapshot.

    ``valid`` marks the nodes where |grad u| exceeds the floor and the
    projection is defined; ``PH[..., :, i]`` is P applied to grad D_i u.
    """

    w: ScalarField
    I_field: ScalarField
    grad: np.ndarray  # (*shape, d)
    PH: np.ndarray  # (*shape, d, d)
    valid: np.ndarray


def bernstein_fields(op: OperatorFamily, fld: ScalarField, t: float, epsilon: float = DEFAULT_EPSILON,
                     grad_floor: float = GRAD_FLOOR) -> BernsteinFields:
    """Assemble w and I from finite-difference derivatives of ``fld``.

    I = <grad b grad u, grad u> - sum q_ij <P grad D_i u, P grad D_j u>
        + sum_k D_k u Tr(D_k Q D^2 u)
    """
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    grid = fld.grid
    g = np.moveaxis(gradient_field(fld).components, 0, -1)
    H = hessian_field(fld)
    coef = eval_fields(op, t, grid.mesh())
    gn = np.sqrt(np.sum(g * g, axis=-1))
    valid = (gn > grad_floor) & grid.interior_mask()
    n = np.where(valid[..., None], g / np.where(gn > 0, gn, 1.0)[..., None], 0.0)
    # P H: subtract the component of each column along n
    PH = H - n[..., :, None] * np.einsum("...k,...kj->...j", n, H)[..., None, :]
    drift = np.einsum("...ji,...i,...j->...", coef.db, g, g)
    diffusion = np.einsum("...ij,...ki,...kj->...", coef.Q, PH, PH)
    mixed = np.einsum("...k,...kij,...ij->...", g, coef.dq, H)
    I = np.where(valid, drift - diffusion + mixed, 0.0)
    w = np.sqrt(gn * gn + epsilon)
    return BernsteinFields(ScalarField(grid, w), ScalarField(grid, I), g, PH, valid)


def bernstein_diagnostic(op: OperatorFamily, traj: Trajectory, c0: float, epsilon: float = DEFAULT_EPSILON,
                         tol: float | None = None, inner_fraction: float = 0.5) -> VerificationReport:
    """Worst margin of I - c0 |grad u|^2 over snapshots and inner nodes.

    The default tolerance is ``1e-2 * max |grad u|^2`` over the same nodes.
    """
    if len(traj) < 2:
        raise ValueError("need a trajectory with at least two snapshots")
    grid = traj.grid
    inner = _inner_mask(grid, inner_fraction)
    series, grad_max, skipped, checked = [], 0.0, 0, 0
    for t, fld in zip(traj.times, traj.fields):
        bf = bernstein_fields(op, fld, float(t), epsilon)
        mask = inner & bf.valid
        skipped += int(np.sum(inner & ~bf.valid))
        checked += int(np.sum(mask))
        g2 = np.sum(bf.grad**2, axis=-1)
        if np.any(inner):
            grad_max = max(grad_max, float(np.max(g2[inner])))
        if not np.any(mask):
            series.append((float(t), -math.inf, None))
            continue
        m, x = _argmax_point(bf.I_field.values - c0 * g2, mask, grid)
        series.append((float(t), m, x))
    if tol is None:
        tol = 1e-2 * grad_max
    notes = [f"checked {checked} node-snapshots, skipped {skipped} with |grad u| <= {GRAD_FLOOR:g}"]
    if checked == 0:
        notes.append("vacuous pass: every inner node was skipped")
    params = {"c0": float(c0), "epsilon": float(epsilon), "rho": inner_fraction, "R": grid.half_width,
              "n": grid.n, "grad_max_sq": grad_max}
    report = _reduce_series("bernstein", series, tol, params, notes)
    if checked == 0:
        report.passed, report.worst_margin = True, -math.inf
    return report


@lru_cache(maxsize=256)
def _bakry_parts(op: OperatorFamily, f: Node) -> tuple[Node, Node, Node, Node]:
    xs = op.variables
    grad = [differentiate(f, v) for v in xs]
    af = generator_expression(op, f)
    lhs = expr.ZERO
    for g, v in zip(grad, xs):
        lhs = simplify(lhs + g * differentiate(af, v))
    gnorm = gradient_norm_expression(f, op.dimension)
    a_gnorm = generator_expression(op, gnorm)
    return lhs, gnorm, a_gnorm, simplify(gnorm * gnorm)


def bakry_residual(op: OperatorFamily, f: Node, s: float, x: Sequence[float], c: float) -> float:
    """<grad f, grad(A(s)f)> - |grad f| A(s)|grad f| - c |grad f|^2 at x, all derivatives symbolic."""
    lhs, gnorm, a_gnorm, _ = _bakry_parts(op, f)
    g = evaluate(gnorm, s, x)
    if not g > 1e-10:
        raise ProbeError(f"|grad f| = {g:.3g} at {tuple(x)}: |grad f| is not smooth there, choose another point")
    return evaluate(lhs, s, x) - g * evaluate(a_gnorm, s, x) - c * g * g


def _richardson(values: Sequence[float], steps: Sequence[float]) -> float:
    """Neville extrapolation to step 0 for an even expansion in the step."""
    h2 = [h * h for h in steps]
    table = list(values)
    n = len(table)
    for m in range(1, n):
        for i in range(n - 1, m - 1, -1):
            table[i] = table[i] + (table[i] - table[i - 1]) * h2[i] / (h2[i - m] - h2[i])
    return table[-1]


def _two_sided(op, f, s, x, direction, scale, c, steps):
    """Residual quotients at x +- delta * direction, their averages and the extrapolated limit."""
    x = np.asarray(x, dtype=float)
    plus, minus = [], []
    for delta in steps:
        plus.append(bakry_residual(op, f, s, x + delta * direction, c) / scale(delta))
        minus.append(bakry_residual(op, f, s, x - delta * direction, c) / scale(-delta))
    avg = [(a + b) / 2.0 for a, b in zip(plus, minus)]
    return plus, minus, _richardson(avg, steps)


def _shifted(i: int, x: Sequence[float]) -> Node:
    return var(f"x{i + 1}") - const(float(x[i]))


def necessity_probe(op: OperatorFamily, s: float, x: Sequence[float], c: float = 0.0,
                    tol: float = 1e-3, steps: Sequence[float] = PROBE_STEPS,
                    epsilons: Sequence[float] = PROBE_EPSILONS) -> ConditionReport:
    """Infer T_kij = D_k q_ij + D_i q_kj + D_j q_ik at (s, x) from Bakry residuals.

    Pattern i=i=i uses f = cos(y_i - x_i): residual / (sin d cos d) tends to
    D_i q_ii.  The quadratic patterns use f = <a, y - x>^2, whose residual
    divided by 4<a, y - x> tends to sum a_i a_j a_k D_k q_ij = T(a,a,a)/3;
    a = e_i + eps e_j (eps swept, polynomial fit to eps = 0) isolates T_iij
    and a = e_i + e_j + e_k isolates T_ijk.  The report passes iff every
    inferred |T| is at most ``tol``; ``details`` compares each entry with the
    symbolic tensor.
    """
    d = op.dimension
    x = np.asarray(x, dtype=float)
    if x.shape != (d,):
        raise ValueError(f"point must have {d} coordinates")
    if not op.contains_time(s):
        raise ValueError(f"s={s} is outside the operator's time interval")
    exact = algebraic_tensor(eval_at(op, s, x).dq)
    inferred: dict[tuple[int, int, int], float] = {}
    details: dict[str, object] = {}

    for i in range(d):
        f = call("cos", _shifted(i, x))
        e = np.eye(d)[i]
        plus, minus, limit = _two_sided(op, f, s, x, e, lambda dl: math.sin(dl) * math.cos(dl), c, steps)
        inferred[(i, i, i)] = 3.0 * limit
        details[f"D{i + 1}q{i + 1}{i + 1}"] = limit
        details[f"squeeze{i + 1}.upper"] = plus[-1]
        details[f"squeeze{i + 1}.lower"] = minus[-1]

    def cubic_form(a: np.ndarray) -> float:
        ell = expr.ZERO
        for k in np.flatnonzero(a):
            ell = simplify(ell + const(float(a[k])) * _shifted(int(k), x))
        f = simplify(ell * ell)
        norm = float(np.linalg.norm(a))
        direction = a / norm
        return _two_sided(op, f, s, x, direction, lambda dl: 4.0 * dl * norm, c, steps)[2]

    for i in range(d):
        for j in range(d):
            if i == j:
                continue
            g = []
            for eps in epsilons:
                a = np.zeros(d)
                a[i], a[j] = 1.0, eps
                g.append((3.0 * cubic_form(a) - inferred[(i, i, i)]) / (3.0 * eps))
            # g(eps) = T_iij + eps T_ijj + eps^2 T_jjj / 3: exact quadratic fit
            coeffs = np.polyfit(np.asarray(epsilons), np.asarray(g), len(epsilons) - 1)
            inferred[(i, i, j)] = float(coeffs[-1])
    for i in range(d):
        for j in range(i + 1, d):
            for k in range(j + 1, d):
                a = np.zeros(d)
                a[[i, j, k]] = 1.0
                trip = (i, j, k)
                known = sum(inferred[(l, l, l)] for l in trip)
                known += 3.0 * sum(inferred[(l, l, m)] for l in trip for m in trip if m != l)
                inferred[(i, j, k)] = (3.0 * cubic_form(a) - known) / 6.0

    worst_key, worst, mismatch = None, 0.0, 0.0
    for key in sorted(inferred):
        val = inferred[key]
        k_, i_, j_ = key
        sym = float(exact[k_, i_, j_])
        label = "T" + "".join(str(v + 1) for v in key)
        details[f"{label}.inferred"] = val
        details[f"{label}.symbolic"] = sym
        mismatch = max(mismatch, abs(val - sym) / max(1.0, abs(sym)))
        if abs(val) > worst:
            worst, worst_key = abs(val), label
    residual = algebraic_residual(op, s, x)
    details["algebraic_residual"] = residual
    details["max_relative_mismatch"] = mismatch
    details["worst_pattern"] = worst_key
    notes = [
        "limits y -> x over steps " + ", ".join(f"{h:g}" for h in steps) + " with Richardson extrapolation",
        "quadratic patterns fitted over eps in " + ", ".join(f"{e:g}" for e in epsilons),
    ]
    return ConditionReport(
        condition="necessity",
        passed=bool(worst <= tol),
        extremal=float(worst),
        witness_t=float(s),
        witness_x=tuple(float(v) for v in x),
        samples=2 * len(steps) * len(inferred),
        tol=tol,
        notes=notes,
        details=details,
    )


def max_principle_check(traj: Trajectory, f_sup: float | None = None, tol: float = MAX_PRINCIPLE_TOL) -> VerificationReport:
    """Worst of ||u(t)||_inf - ||f||_inf over snapshots."""
    grid = traj.grid
    if f_sup is None:
        f_sup = traj.initial.sup()
    everywhere = np.ones(grid.shape, dtype=bool)
    series = []
    for t, fld in zip(traj.times, traj.fields):
        m, x = _argmax_point(np.abs(fld.values), everywhere, grid)
        series.append((float(t), m - f_sup, x))
    return _reduce_series("max-principle", series, tol, {"f_sup": float(f_sup), "R": grid.half_width, "n": grid.n})
