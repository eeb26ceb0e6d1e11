"""The nonautonomous operator family A(t) = Tr(Q D^2) + <b, grad>.

An operator is described by a plain-text document::

    [meta]
    d = 3
    t_lo = 0
    t_hi = 10

    [params]
    psi = 1
    a1 = 2 + sin(t)        # parameters may depend on t

    [diffusion]
    q11 = a1 + psi*x2^2    # upper triangle; q12 and q21 both allowed
    q12 = -psi*x1*x2
    ...

    [drift]
    b1 = -x1
    ...

    [lyapunov]             # optional
    phi = 1 + norm2(x)
    gamma = 6

    [ellipticity]          # optional, used with eta-mode "user-expression"
    eta = min(a1, a2, a3)

Off-diagonal diffusion entries that are not given are zero.
"""
from __future__ import annotations

import configparser
import hashlib
import re
from dataclasses import dataclass, field
from functools import cached_property, lru_cache
from typing import Mapping, Sequence

import numpy as np

from . import expr
from .expr import Node, differentiate, evaluate, evaluate_array, simplify
from .linalg import lambda_min

__all__ = [
    "SpecError",
    "OperatorSpec",
    "OperatorFamily",
    "PointEvaluation",
    "CoefficientFields",
    "ETA_MODES",
    "parse_spec_document",
    "build_operator",
    "eval_at",
    "eval_fields",
    "eta_values",
    "generator_expression",
    "apply_generator",
]

ETA_MODES = ("lambda-min", "user-expression")


class SpecError(ValueError):
    """Malformed or inconsistent operator document."""


@dataclass
class OperatorSpec:
    """Raw contents of an operator document, before parsing the formulas."""

    dimension: int
    t_lo: float
    t_hi: float
    params: dict[str, str] = field(default_factory=dict)
    diffusion: dict[tuple[int, int], str] = field(default_factory=dict)
    drift: dict[int, str] = field(default_factory=dict)
    lyapunov: str | None = None
    lyapunov_gamma: float | None = None
    eta: str | None = None
    text: str = ""

    def render(self) -> str:
        lines = ["[meta]", f"d = {self.dimension}", f"t_lo = {self.t_lo:.17g}", f"t_hi = {self.t_hi:.17g}", ""]
        if self.params:
            lines.append("[params]")
            lines += [f"{k} = {v}" for k, v in self.params.items()]
            lines.append("")
        lines.append("[diffusion]")
        for (i, j), v in sorted(self.diffusion.items()):
            lines.append(f"{_qkey(i, j, self.dimension)} = {v}")
        lines += ["", "[drift]"]
        for i, v in sorted(self.drift.items()):
            lines.append(f"{_bkey(i, self.dimension)} = {v}")
        if self.lyapunov is not None:
            lines += ["", "[lyapunov]", f"phi = {self.lyapunov}"]
            if self.lyapunov_gamma is not None:
                lines.append(f"gamma = {self.lyapunov_gamma:.17g}")
        if self.eta is not None:
            lines += ["", "[ellipticity]", f"eta = {self.eta}"]
        return "\n".join(lines) + "\n"


def _qkey(i, j, d):
    return f"q{i}{j}" if d <= 9 else f"q{i}_{j}"


def _bkey(i, d):
    return f"b{i}"


_Q_RE = re.compile(r"q(?:(\d)(\d)|(\d+)_(\d+))")
_B_RE = re.compile(r"b(\d+)")


def parse_spec_document(text: str) -> OperatorSpec:
    """Split an operator document into its sections (formulas stay as text)."""
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise SpecError(f"cannot read operator document: {exc}") from exc
    if not cp.has_section("meta") or "d" not in cp["meta"]:
        raise SpecError("[meta] section with d=<int> is required")
    try:
        d = int(cp["meta"]["d"])
        t_lo = float(cp["meta"].get("t_lo", "0"))
        t_hi = float(cp["meta"].get("t_hi", "inf"))
    except ValueError as exc:
        raise SpecError(f"bad [meta] value: {exc}") from exc
    if d < 1:
        raise SpecError("d must be >= 1")
    if not t_lo < t_hi:
        raise SpecError("t_lo must be smaller than t_hi")
    spec = OperatorSpec(dimension=d, t_lo=t_lo, t_hi=t_hi, text=text)
    if cp.has_section("params"):
        spec.params = dict(cp["params"])
    if not cp.has_section("diffusion"):
        raise SpecError("[diffusion] section is required")
    for key, value in cp["diffusion"].items():
        m = _Q_RE.fullmatch(key)
        if not m:
            raise SpecError(f"bad diffusion key {key!r}")
        i, j = (int(m.group(1)), int(m.group(2))) if m.group(1) else (int(m.group(3)), int(m.group(4)))
        if not (1 <= i <= d and 1 <= j <= d):
            raise SpecError(f"diffusion entry {key} outside dimension {d}")
        spec.diffusion[(i, j)] = value
    if not cp.has_section("drift"):
        raise SpecError("[drift] section is required")
    for key, value in cp["drift"].items():
        m = _B_RE.fullmatch(key)
        if not m or not 1 <= int(m.group(1)) <= d:
            raise SpecError(f"bad drift key {key!r} for dimension {d}")
        spec.drift[int(m.group(1))] = value
    if cp.has_section("lyapunov"):
        sec = cp["lyapunov"]
        spec.lyapunov = sec.get("phi")
        if "gamma" in sec:
            spec.lyapunov_gamma = float(sec["gamma"])
    if cp.has_section("ellipticity"):
        spec.eta = cp["ellipticity"].get("eta")
    return spec


@dataclass(frozen=True, eq=False)
class OperatorFamily:
    """Coefficients of A(t) with their symbolic first spatial derivatives.

    ``q`` is the full symmetric matrix (mirrored entries are the same node),
    ``dq[k][i][j] = D_k q_ij`` and ``db[j][i] = D_j b_i``.
    """

    dimension: int
    q: tuple
    b: tuple
    dq: tuple
    db: tuple
    t_lo: float
    t_hi: float
    lyapunov: Node | None = None
    lyapunov_gamma: float | None = None
    eta: Node | None = None
    source: str = ""

    @property
    def variables(self) -> tuple[str, ...]:
        return expr.space_variables(self.dimension)

    @cached_property
    def time_dependent(self) -> bool:
        nodes = [n for row in self.q for n in row] + list(self.b)
        return any(expr.depends_on(n, "t") for n in nodes)

    @cached_property
    def spec_hash(self) -> str:
        return hashlib.sha256(self.source.encode("utf-8")).hexdigest()

    def contains_time(self, t: float) -> bool:
        return self.t_lo < t <= self.t_hi

    def parse(self, source: str) -> Node:
        """Parse a formula in this operator's dimension."""
        return expr.parse(source, self.dimension)


def _check_symmetric_pair(a: Node, b: Node, d: int, key: str) -> None:
    if simplify(a) == simplify(b):
        return
    rng = np.random.default_rng(0)
    pts = rng.uniform(-3.0, 3.0, size=(64, d + 1))
    va = evaluate_array(a, pts[:, 0], pts[:, 1:].T)
    vb = evaluate_array(b, pts[:, 0], pts[:, 1:].T)
    if not np.allclose(va, vb, rtol=1e-12, atol=1e-12):
        raise SpecError(f"diffusion matrix is not symmetric: {key} differs from its transpose")


def build_operator(spec: "str | OperatorSpec") -> OperatorFamily:
    """Parse all formulas and precompute the coefficient derivatives."""
    if isinstance(spec, str):
        spec = parse_spec_document(spec)
    d = spec.dimension
    params: dict[str, Node] = {}
    for name, value in spec.params.items():
        try:
            params[name] = simplify(expr.parse(value, d, params))
        except expr.ExpressionError as exc:
            raise SpecError(f"[params] {name}: {exc}") from exc

    def parse_entry(label: str, source: str) -> Node:
        try:
            node = simplify(expr.parse(source, d, params))
        except expr.ExpressionError as exc:
            raise SpecError(f"{label}: {exc}") from exc
        return node

    q = [[None] * d for _ in range(d)]
    for (i, j), source in spec.diffusion.items():
        node = parse_entry(f"[diffusion] {_qkey(i, j, d)}", source)
        a, b = min(i, j) - 1, max(i, j) - 1
        if q[a][b] is not None:
            _check_symmetric_pair(q[a][b], node, d, _qkey(i, j, d))
            continue
        q[a][b] = node
    for i in range(d):
        if q[i][i] is None:
            raise SpecError(f"missing diagonal diffusion entry {_qkey(i + 1, i + 1, d)}")
        for j in range(i + 1, d):
            if q[i][j] is None:
                q[i][j] = expr.ZERO
            q[j][i] = q[i][j]
    missing = [i for i in range(1, d + 1) if i not in spec.drift]
    if missing:
        raise SpecError(f"missing drift entries: {', '.join(_bkey(i, d) for i in missing)}")
    b = [parse_entry(f"[drift] {_bkey(i, d)}", spec.drift[i]) for i in range(1, d + 1)]
    xs = expr.space_variables(d)
    dq = tuple(tuple(tuple(differentiate(q[i][j], xs[k]) for j in range(d)) for i in range(d)) for k in range(d))
    db = tuple(tuple(differentiate(b[i], xs[j]) for i in range(d)) for j in range(d))
    phi = parse_entry("[lyapunov] phi", spec.lyapunov) if spec.lyapunov else None
    if phi is not None and expr.depends_on(phi, "t"):
        raise SpecError("[lyapunov] phi must not depend on t")
    eta = parse_entry("[ellipticity] eta", spec.eta) if spec.eta else None
    return OperatorFamily(
        dimension=d,
        q=tuple(tuple(row) for row in q),
        b=tuple(b),
        dq=dq,
        db=db,
        t_lo=spec.t_lo,
        t_hi=spec.t_hi,
        lyapunov=phi,
        lyapunov_gamma=spec.lyapunov_gamma,
        eta=eta,
        source=spec.text or spec.render(),
    )


@dataclass(frozen=True)
class PointEvaluation:
    Q: np.ndarray
    b: np.ndarray
    dq: np.ndarray
    db: np.ndarray
    eta: float


@dataclass(frozen=True)
class CoefficientFields:
    """Coefficients sampled at many points; leading axes are the sample shape."""

    Q: np.ndarray  # (..., d, d)
    b: np.ndarray  # (..., d)
    dq: np.ndarray | None = None  # (..., k, i, j)
    db: np.ndarray | None = None  # (..., j, i)


def eval_fields(op: OperatorFamily, t, x: Sequence[np.ndarray], derivatives: bool = True) -> CoefficientFields:
    """Evaluate Q, b and optionally their derivatives on broadcast arrays."""
    d = op.dimension
    x = [np.asarray(v, dtype=float) for v in x]
    shape = np.broadcast_shapes(np.shape(t), *(v.shape for v in x))
    Q = np.empty(shape + (d, d))
    cache: dict[Node, np.ndarray] = {}

    def value(node):
        if node not in cache:
            cache[node] = np.broadcast_to(evaluate_array(node, t, x), shape)
        return cache[node]

    for i in range(d):
        for j in range(i, d):
            Q[..., i, j] = Q[..., j, i] = value(op.q[i][j])
    b = np.stack([value(n) for n in op.b], axis=-1) if d else np.empty(shape + (0,))
    if not derivatives:
        return CoefficientFields(Q, b)
    dq = np.empty(shape + (d, d, d))
    for k in range(d):
        for i in range(d):
            for j in range(i, d):
                dq[..., k, i, j] = dq[..., k, j, i] = value(op.dq[k][i][j])
    db = np.empty(shape + (d, d))
    for j in range(d):
        for i in range(d):
            db[..., j, i] = value(op.db[j][i])
    return CoefficientFields(Q, b, dq, db)


def eta_values(op: OperatorFamily, t, x, Q: np.ndarray, eta_mode: str = "lambda-min") -> np.ndarray:
    """The ellipticity function at the sample points for the chosen mode."""
    if eta_mode == "lambda-min":
        return lambda_min(Q)
    if eta_mode == "user-expression":
        if op.eta is None:
            raise SpecError("eta-mode 'user-expression' needs an [ellipticity] eta entry")
        return np.broadcast_to(evaluate_array(op.eta, t, x), Q.shape[:-2]).copy()
    raise ValueError(f"unknown eta mode {eta_mode!r}; expected one of {ETA_MODES}")


def eval_at(op: OperatorFamily, t: float, x: Sequence[float]) -> PointEvaluation:
    """All coefficient tensors at one point; ``eta`` is lambda_min(Q)."""
    x = np.asarray(x, dtype=float)
    if x.shape != (op.dimension,):
        raise ValueError(f"point must have {op.dimension} coordinates")
    try:
        fields = eval_fields(op, float(t), [np.float64(v) for v in x])
    except expr.ExpressionDomainError as exc:
        raise expr.ExpressionDomainError(f"at t={t!r}, x={x.tolist()!r}: {exc}", exc.node) from exc
    return PointEvaluation(
        Q=fields.Q, b=fields.b, dq=fields.dq, db=fields.db, eta=float(lambda_min(fields.Q))
    )


@lru_cache(maxsize=256)
def generator_expression(op: OperatorFamily, phi: Node) -> Node:
    """Symbolic A(t)phi = sum q_ij D_ij phi + sum b_i D_i phi (depends on t)."""
    xs = op.variables
    d = op.dimension
    grad = [differentiate(phi, v) for v in xs]
    out = expr.ZERO
    for i in range(d):
        for j in range(d):
            dij = differentiate(grad[i], xs[j])
            out = expr.simplify(out + op.q[i][j] * dij)
        out = expr.simplify(out + op.b[i] * grad[i])
    return out


def apply_generator(op: OperatorFamily, phi: Node, t: float, x: Sequence[float]) -> float:
    """(A(t)phi)(x) from exact symbolic derivatives of ``phi``."""
    return evaluate(generator_expression(op, phi), t, x)
