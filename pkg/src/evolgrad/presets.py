"""Ready-made operator spec documents.

Parameters may be numbers or formulas in ``t`` (for example
``a1 = "2 + sin(t)"``).  Admissibility constraints are checked on a sample
of the time interval and a violation names the constraint.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from . import expr
from .operator import OperatorFamily, build_operator

__all__ = ["Preset", "PresetError", "CATALOG", "names", "get", "instantiate", "build"]

T_LO, T_HI = -1.0, 100.0


class PresetError(ValueError):
    pass


@dataclass(frozen=True)
class Preset:
    name: str
    summary: str
    defaults: Mapping[str, "float | str"]
    render: Callable[[dict], str]
    constraints: Callable[[dict, np.ndarray], None]
    # expected pass/fail of ellipticity, algebraic, c0, lyapunov at defaults
    expected: Mapping[str, bool] = field(default_factory=dict)
    expected_c0: float | None = None
    eta_mode: str = "lambda-min"
    notes: str = ""


def _values(source: "float | str", ts: np.ndarray) -> np.ndarray:
    node = expr.parse(str(source), 1)
    if expr.space_variables(1)[0] in expr.variables(node):
        raise PresetError(f"parameter {source!r} may depend on t only")
    return np.broadcast_to(expr.evaluate_array(node, ts, [np.zeros_like(ts)]), ts.shape)


def _header(d: int, params: dict, names: tuple[str, ...]) -> list[str]:
    lines = ["[meta]", f"d = {d}", f"t_lo = {params['t_lo']!r}", f"t_hi = {params['t_hi']!r}"]
    if names:
        lines.append("")
        lines.append("[params]")
        lines += [f"{n} = {params[n]}" for n in names]
    return lines


def _drift_power(params: dict, i: int) -> str:
    beta = params["beta"]
    try:
        integral = float(beta) == int(float(beta))
    except ValueError:
        integral = False
    if integral and int(float(beta)) == 1:
        return f"-gamma*x{i}*norm2(x)"
    return f"-gamma*x{i}*norm2(x)^beta"


def _check_positive(params, ts, names):
    for n in names:
        if not np.all(_values(params[n], ts) > 0):
            raise PresetError(f"requires {n} > 0 on the time interval")


def _check_beta(params):
    try:
        beta = float(params["beta"])
    except ValueError:
        raise PresetError("beta must be a number") from None
    if beta < 1:
        raise PresetError("requires beta >= 1")


def _check_gamma(params, ts, a_names):
    abar = np.min([_values(params[n], ts) for n in a_names], axis=0)
    psi = _values(params["psi"], ts)
    gamma = _values(params["gamma"], ts)
    bound = np.maximum.reduce([abar, psi, 2.0 * psi**2 / abar])
    bad = gamma <= bound
    if np.any(bad):
        k = int(np.argmax(bad))
        raise PresetError(f"requires gamma > {bound[k]:g} (max of abar, psi, 2 psi^2/abar) at t={ts[k]:g}")


def _lyapunov_gamma(params, ts, a_names) -> float:
    # A phi / phi <= 2 max(sum a_i, psi) for phi = 1 + |x|^2
    tr = np.sum([_values(params[n], ts) for n in a_names], axis=0)
    psi = _values(params["psi"], ts)
    return float(np.max(2.0 * np.maximum(tr, psi)))


def _sample_times(params) -> np.ndarray:
    lo, hi = float(params["t_lo"]), float(params["t_hi"])
    if not lo < hi:
        raise PresetError("requires t_lo < t_hi")
    return np.linspace(lo, hi, 201)[1:]


def _render_example41(p: dict) -> str:
    ts = _sample_times(p)
    lines = _header(3, p, ("a1", "a2", "a3", "psi", "gamma", "beta"))
    lines += [
        "",
        "[diffusion]",
        "q11 = a1 + psi*x2^2",
        "q12 = -psi*x1*x2",
        "q13 = 0",
        "q22 = a2 + psi*x1^2",
        "q23 = 0",
        "q33 = a3",
        "",
        "[drift]",
    ]
    lines += [f"b{i} = {_drift_power(p, i)}" for i in (1, 2, 3)]
    lines += [
        "",
        "[lyapunov]",
        "phi = 1 + norm2(x)",
        f"gamma = {_lyapunov_gamma(p, ts, ('a1', 'a2', 'a3'))!r}",
        "",
        "[ellipticity]",
        "eta = min(a1, a2, a3)",
    ]
    return "\n".join(lines) + "\n"


def _constraints_example41(p, ts):
    _check_positive(p, ts, ("a1", "a2", "a3", "psi"))
    _check_beta(p)
    _check_gamma(p, ts, ("a1", "a2", "a3"))


def _render_block2d(p: dict) -> str:
    ts = _sample_times(p)
    lines = _header(2, p, ("a1", "a2", "psi", "gamma", "beta"))
    lines += [
        "",
        "[diffusion]",
        "q11 = a1 + psi*x2^2",
        "q12 = -psi*x1*x2",
        "q22 = a2 + psi*x1^2",
        "",
        "[drift]",
    ]
    lines += [f"b{i} = {_drift_power(p, i)}" for i in (1, 2)]
    lines += [
        "",
        "[lyapunov]",
        "phi = 1 + norm2(x)",
        f"gamma = {_lyapunov_gamma(p, ts, ('a1', 'a2'))!r}",
        "",
        "[ellipticity]",
        "eta = min(a1, a2)",
    ]
    return "\n".join(lines) + "\n"


def _constraints_block2d(p, ts):
    _check_positive(p, ts, ("a1", "a2", "psi"))
    _check_beta(p)
    _check_gamma(p, ts, ("a1", "a2"))


def _render_heat(p: dict) -> str:
    lines = _header(1, p, ("a",))
    lines += ["", "[diffusion]", "q11 = a", "", "[drift]", "b1 = 0", "",
              "[lyapunov]", "phi = 1 + norm2(x)", f"gamma = {2.0 * float(np.max(_values(p['a'], _sample_times(p))))!r}",
              "", "[ellipticity]", "eta = a"]
    return "\n".join(lines) + "\n"


def _constraints_heat(p, ts):
    _check_positive(p, ts, ("a",))


def _render_ou(p: dict) -> str:
    lines = _header(1, p, ("kappa",))
    lines += ["", "[diffusion]", "q11 = 1", "", "[drift]", "b1 = -kappa*x1", "",
              "[lyapunov]", "phi = 1 + norm2(x)", "gamma = 2.0", "", "[ellipticity]", "eta = 1"]
    return "\n".join(lines) + "\n"


def _constraints_ou(p, ts):
    _check_positive(p, ts, ("kappa",))


def _render_wang(p: dict) -> str:
    lines = _header(2, p, ("gamma",))
    lines += ["", "[diffusion]", "q11 = 1 + x1^2", "q12 = 0", "q22 = 1 + x1^2", "",
              "[drift]", "b1 = -gamma*x1", "b2 = -gamma*x2", "",
              # A phi = 4(1 + x1^2) - 2 gamma |x|^2 <= 4 phi
              "[lyapunov]", "phi = 1 + norm2(x)", "gamma = 4.0", "", "[ellipticity]", "eta = 1 + x1^2"]
    return "\n".join(lines) + "\n"


def _constraints_wang(p, ts):
    if not np.all(_values(p["gamma"], ts) >= 2):
        raise PresetError("requires gamma >= 2")


_ALL_PASS = {"ellipticity": True, "algebraic": True, "c0": True, "lyapunov": True}

CATALOG: dict[str, Preset] = {
    p.name: p
    for p in (
        Preset(
            "heat",
            "d=1, q = a, b = 0",
            {"a": 1.0},
            _render_heat,
            _constraints_heat,
            _ALL_PASS,
            expected_c0=0.0,
            notes="Constant coefficients; the gradient estimate holds with c0 = 0.",
        ),
        Preset(
            "ou",
            "d=1, q = 1, b = -kappa x (Ornstein-Uhlenbeck)",
            {"kappa": 1.0},
            _render_ou,
            _constraints_ou,
            _ALL_PASS,
            expected_c0=-1.0,
            notes="c0 = -kappa exactly; the gradient estimate holds with c0 = -kappa.",
        ),
        Preset(
            "example41",
            "d=3, Q = diag(a) + psi (x2^2, -x1 x2; -x1 x2, x1^2) block, b = -gamma x |x|^(2 beta)",
            {"a1": 1.0, "a2": 1.0, "a3": 1.0, "psi": 1.0, "gamma": 3.0, "beta": 1},
            _render_example41,
            _constraints_example41,
            _ALL_PASS,
            expected_c0=0.0,
            eta_mode="user-expression",
            notes=(
                "Space-dependent diffusion satisfying the algebraic condition. Requires "
                "gamma > max(abar, psi, 2 psi^2/abar) with abar = min(a1, a2, a3). With eta = abar the "
                "pointwise bound is c(t,x) = (2 psi^2/abar)|x|^2 - gamma |x|^(2 beta), so c0 = 0 at the defaults."
            ),
        ),
        Preset(
            "block2d",
            "d=2 block: Q = diag(a1, a2) + psi (x2^2, -x1 x2; -x1 x2, x1^2), b = -gamma x |x|^(2 beta)",
            {"a1": 1.0, "a2": 1.0, "psi": 1.0, "gamma": 3.0, "beta": 1},
            _render_block2d,
            _constraints_block2d,
            _ALL_PASS,
            expected_c0=0.0,
            eta_mode="user-expression",
            notes="Two-dimensional block of the example41 family; same constraints with abar = min(a1, a2).",
        ),
        Preset(
            "wang-counterexample",
            "d=2, Q = (1 + x1^2) Id, b = -gamma x",
            {"gamma": 4.0},
            _render_wang,
            _constraints_wang,
            {"ellipticity": True, "algebraic": False, "c0": True, "lyapunov": True},
            expected_c0=None,
            notes=(
                "Nonconstant scalar diffusion: D1 q11 = 2 x1, so the algebraic tensor T_111 = 6 x1 is nonzero "
                "off x1 = 0 and the pointwise gradient estimate fails for every c0."
            ),
        ),
    )
}


def names() -> list[str]:
    return sorted(CATALOG)


def get(name: str) -> Preset:
    try:
        return CATALOG[name]
    except KeyError:
        raise PresetError(f"unknown preset {name!r}; available: {', '.join(names())}") from None


def instantiate(name: str, params: "Mapping[str, float | str] | None" = None) -> str:
    """Spec document for ``name`` with parameter overrides applied.

    ``t_lo`` and ``t_hi`` may also be overridden (defaults -1 and 100).
    """
    preset = get(name)
    merged: dict = {"t_lo": T_LO, "t_hi": T_HI, **preset.defaults}
    for key, value in (params or {}).items():
        if key not in merged:
            raise PresetError(f"preset {name!r} has no parameter {key!r}; known: {', '.join(sorted(merged))}")
        merged[key] = value
    for key in ("t_lo", "t_hi"):
        merged[key] = float(merged[key])
    try:
        preset.constraints(merged, _sample_times(merged))
    except expr.ExpressionError as exc:
        raise PresetError(f"bad parameter expression: {exc}") from exc
    return preset.render(merged)


def build(name: str, params: "Mapping[str, float | str] | None" = None) -> OperatorFamily:
    return build_operator(instantiate(name, params))
