"""Finite-difference Cauchy-Dirichlet solver on expanding boxes.

G(t, s)f is approximated by solving D_t u = A(t)u on a box with u = 0 on the
boundary, and the whole-space solution is approached by enlarging the box
(:func:`nested_evolve`).  Second derivatives use central differences, mixed
derivatives the 4-point cross stencil, drift terms upwind (default) or
central differences.  The default time discretisation is backward Euler whose
linear systems are solved by symmetric Gauss-Seidel sweeps.
"""
from __future__ import annotations

import math
import os
import warnings
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from . import _backend
from .expr import Node, evaluate_array
from .linalg import lambda_max
from .operator import OperatorFamily, eval_fields

__all__ = [
    "Grid",
    "ScalarField",
    "SolverConfig",
    "Trajectory",
    "DiscreteGenerator",
    "SolverError",
    "SolverInstabilityError",
    "SolverConvergenceError",
    "DomainTruncationWarning",
    "NestedResult",
    "assemble_generator",
    "apply_discrete_generator",
    "sample",
    "auto_dt",
    "evolve",
    "evolve_many",
    "nested_evolve",
    "gradient_field",
    "hessian_field",
    "write_snapshots",
]


class SolverError(RuntimeError):
    pass


class SolverInstabilityError(SolverError):
    pass


class SolverConvergenceError(SolverError):
    pass


class DomainTruncationWarning(UserWarning):
    """Successive box solutions are not settling; the boxes are too small."""


@dataclass(frozen=True)
class Grid:
    """Uniform grid on ``[c - R, c + R]^d`` with ``n`` (odd) points per axis."""

    dimension: int
    half_width: float
    n: int
    center: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.n < 5 or self.n % 2 == 0:
            raise ValueError("points per axis must be odd and >= 5")
        if not self.half_width > 0:
            raise ValueError("half width must be positive")
        c = (0.0,) * self.dimension if self.center is None else tuple(float(v) for v in self.center)
        if len(c) != self.dimension:
            raise ValueError("center has the wrong dimension")
        object.__setattr__(self, "center", c)

    @property
    def h(self) -> float:
        return 2.0 * self.half_width / (self.n - 1)

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.n,) * self.dimension

    @property
    def size(self) -> int:
        return self.n ** self.dimension

    @property
    def axes(self) -> list[np.ndarray]:
        return [c + self.half_width * np.linspace(-1.0, 1.0, self.n) for c in self.center]

    def mesh(self) -> list[np.ndarray]:
        return np.meshgrid(*self.axes, indexing="ij")

    def points(self) -> np.ndarray:
        return np.stack([m.ravel() for m in self.mesh()], axis=-1)

    def coords(self, index: Sequence[int]) -> tuple[float, ...]:
        return tuple(float(self.axes[i][k]) for i, k in enumerate(index))

    def node_index(self, point: Sequence[float]) -> tuple[int, ...]:
        """Multi-index of the node nearest to ``point``."""
        out = []
        for c, p in zip(self.center, point):
            k = int(round((p - c + self.half_width) / self.h))
            if not 0 <= k < self.n:
                raise ValueError(f"point {tuple(point)} is outside the grid")
            out.append(k)
        return tuple(out)

    def interior_mask(self) -> np.ndarray:
        mask = np.zeros(self.shape, dtype=bool)
        mask[(slice(1, -1),) * self.dimension] = True
        return mask

    def inner_mask(self, fraction: float) -> np.ndarray:
        """Nodes within the concentric box of half-width ``fraction * R``."""
        lim = fraction * self.half_width + 1e-9 * self.h
        mask = np.ones(self.shape, dtype=bool)
        for i, m in enumerate(self.mesh()):
            mask &= np.abs(m - self.center[i]) <= lim
        return mask & self.interior_mask()


@dataclass
class ScalarField:
    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float).reshape(self.grid.shape)

    def sup(self) -> float:
        return float(np.max(np.abs(self.values)))

    def at(self, point: Sequence[float]) -> float:
        return float(self.values[self.grid.node_index(point)])


@dataclass(frozen=True)
class SolverConfig:
    """Time discretisation and verification settings.

    ``scheme`` is ``"implicit"`` (theta-method, ``theta`` in [0, 1]) or
    ``"explicit"`` (forward Euler).  ``dt=None`` picks a step automatically:
    ``h**2`` for implicit runs, ``0.9 h^2 / (2 d Lambda + h B)`` for explicit
    ones.  Snapshots are taken at ``snapshot_times`` or, if not given, at
    ``n_snapshots`` equally spaced times.
    """

    scheme: str = "implicit"
    theta: float = 1.0
    dt: float | None = None
    advection: str = "upwind"
    snapshot_times: tuple[float, ...] | None = None
    n_snapshots: int = 10
    inner_fraction: float = 0.5
    tol: float = 1e-10
    max_sweeps: int = 50000
    omega: float = 1.0
    backend: str | None = None

    def __post_init__(self):
        if self.scheme not in ("implicit", "explicit"):
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if not 0.0 <= self.theta <= 1.0:
            raise ValueError("theta must lie in [0, 1]")
        if self.dt is not None and not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.advection not in ("upwind", "centered"):
            raise ValueError(f"unknown advection discretisation {self.advection!r}")
        if not 0.0 < self.inner_fraction < 1.0:
            raise ValueError("inner_fraction must lie in (0, 1)")
        if self.n_snapshots < 1:
            raise ValueError("need at least one snapshot")


@dataclass
class Trajectory:
    """Snapshots of one solve; ``fields[0]`` is the datum at time ``s``."""

    grid: Grid
    s: float
    times: np.ndarray
    fields: list[ScalarField]
    initial: ScalarField
    sup_history: np.ndarray
    steps: int = 0
    sweeps: int = 0
    max_residual: float = 0.0
    datum: Node | None = None

    def __len__(self):
        return len(self.fields)


@dataclass
class DiscreteGenerator:
    """A_h(t) as a sparse matrix: interior rows, all-node columns."""

    grid: Grid
    full: sp.csr_matrix
    interior: sp.csr_matrix
    interior_index: np.ndarray

    def apply(self, values: np.ndarray) -> np.ndarray:
        out = np.zeros(self.grid.size)
        out[self.interior_index] = self.full @ np.ravel(values)
        return out.reshape(self.grid.shape)


def sample(node: Node, grid: Grid, t: float = 0.0) -> np.ndarray:
    return evaluate_array(node, t, grid.mesh())


def assemble_generator(op: OperatorFamily, grid: Grid, t: float, advection: str = "upwind") -> DiscreteGenerator:
    d, n, h = grid.dimension, grid.n, grid.h
    if op.dimension != d:
        raise ValueError("operator and grid dimensions differ")
    coef = eval_fields(op, t, grid.mesh(), derivatives=False)
    inner = (slice(1, -1),) * d
    Q = coef.Q[inner]
    b = coef.b[inner]
    full_idx = np.arange(grid.size).reshape(grid.shape)
    n_int = (n - 2) ** d
    row_ids = np.arange(n_int)
    rows, cols, vals = [], [], []

    def add(offset, values):
        sl = tuple(slice(1 + o, n - 1 + o) for o in offset)
        rows.append(row_ids)
        cols.append(full_idx[sl].ravel())
        vals.append(np.broadcast_to(values, Q.shape[:-2]).ravel())

    zero = (0,) * d
    for i in range(d):
        e_plus = tuple(1 if k == i else 0 for k in range(d))
        e_minus = tuple(-1 if k == i else 0 for k in range(d))
        qii = Q[..., i, i] / h**2
        add(zero, -2.0 * qii)
        add(e_plus, qii)
        add(e_minus, qii)
        bi = b[..., i]
        if advection == "upwind":
            bp, bm = np.maximum(bi, 0.0) / h, np.minimum(bi, 0.0) / h
            add(e_plus, bp)
            add(zero, bm - bp)
            add(e_minus, -bm)
        else:
            add(e_plus, bi / (2.0 * h))
            add(e_minus, -bi / (2.0 * h))
    for i in range(d):
        for j in range(i + 1, d):
            # q_ij D_ij + q_ji D_ji = 2 q_ij D_ij, cross stencil / (4 h^2)
            c = Q[..., i, j] / (2.0 * h**2)
            for si, sj, sign in ((1, 1, 1.0), (1, -1, -1.0), (-1, 1, -1.0), (-1, -1, 1.0)):
                off = tuple(si if k == i else sj if k == j else 0 for k in range(d))
                add(off, sign * c)
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    vals = np.concatenate(vals)
    full = sp.coo_matrix((vals, (rows, cols)), shape=(n_int, grid.size)).tocsr()
    interior_index = full_idx[inner].ravel()
    to_interior = -np.ones(grid.size, dtype=np.int64)
    to_interior[interior_index] = np.arange(n_int)
    icol = to_interior[cols]
    keep = icol >= 0
    interior = sp.coo_matrix((vals[keep], (rows[keep], icol[keep])), shape=(n_int, n_int)).tocsr()
    return DiscreteGenerator(grid, full, interior, interior_index)


def apply_discrete_generator(op: OperatorFamily, field: ScalarField, t: float, advection: str = "upwind") -> ScalarField:
    """A_h(t) applied to ``field``; boundary nodes are set to zero."""
    gen = assemble_generator(op, field.grid, t, advection)
    return ScalarField(field.grid, gen.apply(field.values))


def auto_dt(op: OperatorFamily, grid: Grid, s: float, t_end: float, config: SolverConfig) -> float:
    if config.dt is not None:
        return config.dt
    h = grid.h
    if config.scheme == "implicit":
        return h * h
    lam, bsum = 0.0, 0.0
    for t in (s, 0.5 * (s + t_end), t_end):
        coef = eval_fields(op, t, grid.mesh(), derivatives=False)
        lam = max(lam, float(np.max(lambda_max(coef.Q))))
        bsum = max(bsum, float(np.max(np.sum(np.abs(coef.b), axis=-1))))
    return 0.9 * h * h / (2.0 * grid.dimension * lam + h * bsum)


def _schedule(s: float, t_end: float, dt: float, config: SolverConfig) -> tuple[np.ndarray, list[float]]:
    """Snapshot times and the list of step sizes between them."""
    if config.snapshot_times is not None:
        targets = sorted({float(t) for t in config.snapshot_times if s < t < t_end} | {float(t_end)})
    else:
        k = config.n_snapshots
        targets = [s + (t_end - s) * (i + 1) / k for i in range(k)]
        targets[-1] = float(t_end)
    steps = []
    prev = s
    for tgt in targets:
        m = max(1, math.ceil((tgt - prev) / dt - 1e-9))
        steps.append((m, (tgt - prev) / m))
        prev = tgt
    return np.array([s] + targets), steps


class _Stepper:
    """Assembles and caches the per-step linear systems."""

    def __init__(self, op, grid, config):
        self.op = op
        self.grid = grid
        self.config = config
        self.kernel = _backend.get(config.backend)
        self._gen_cache: dict[float, DiscreteGenerator] = {}
        self._sys_cache: dict[tuple[float, float], tuple] = {}

    def generator(self, t: float) -> DiscreteGenerator:
        key = 0.0 if not self.op.time_dependent else t
        if key not in self._gen_cache:
            if self.op.time_dependent:
                self._gen_cache.clear()
            self._gen_cache[key] = assemble_generator(self.op, self.grid, t, self.config.advection)
        return self._gen_cache[key]

    def system(self, t: float, dt: float):
        key = (0.0 if not self.op.time_dependent else t, dt)
        if key not in self._sys_cache:
            if self.op.time_dependent:
                self._sys_cache.clear()
            a = self.generator(t).interior
            m = (sp.identity(a.shape[0], format="csr") - (self.config.theta * dt) * a).tocsr()
            m.sort_indices()
            self._sys_cache[key] = (
                np.ascontiguousarray(m.indptr, dtype=np.intp),
                np.ascontiguousarray(m.indices, dtype=np.int32),
                np.ascontiguousarray(m.data, dtype=np.float64),
            )
        return self._sys_cache[key]

    def step(self, u: np.ndarray, t: float, dt: float) -> tuple[np.ndarray, int, float]:
        cfg = self.config
        if cfg.scheme == "explicit":
            return u + dt * (self.generator(t).interior @ u), 0, 0.0
        rhs = u.copy()
        if cfg.theta < 1.0:
            rhs += (1.0 - cfg.theta) * dt * (self.generator(t).interior @ u)
        if cfg.theta == 0.0:
            return rhs, 0, 0.0
        indptr, indices, data = self.system(t + dt, dt)
        x = u.copy()
        tol = cfg.tol * max(1.0, float(np.max(np.abs(rhs), initial=0.0)))
        sweeps, res = self.kernel.ssor_solve(indptr, indices, data, rhs, x, tol, cfg.max_sweeps, cfg.omega)
        if res > tol:
            raise SolverConvergenceError(
                f"Gauss-Seidel did not reach residual {tol:.3g} in {sweeps} sweeps (residual {res:.3g}) at t={t + dt:.6g}"
            )
        return x, sweeps, res


def evolve_many(op: OperatorFamily, data: Sequence["Node | np.ndarray"], s: float, t_end: float, grid: Grid,
                config: SolverConfig | None = None) -> list[Trajectory]:
    """Evolve several initial data with one shared assembly and step schedule."""
    config = config or SolverConfig()
    if not s < t_end:
        raise ValueError("need s < t_end")
    if not (op.t_lo < s and t_end <= op.t_hi):
        raise ValueError(f"[{s}, {t_end}] is not inside the operator's time interval ({op.t_lo}, {op.t_hi}]")
    dt = auto_dt(op, grid, s, t_end, config)
    times, schedule = _schedule(s, t_end, dt, config)
    stepper = _Stepper(op, grid, config)
    interior = grid.interior_mask()
    states = []
    for f in data:
        node = f if isinstance(f, Node) else None
        values = sample(f, grid, s) if node is not None else np.asarray(f, dtype=float).reshape(grid.shape)
        if not np.all(np.isfinite(values)):
            raise ValueError("initial datum is not finite on the grid")
        initial = ScalarField(grid, values.copy())
        f_sup = initial.sup()
        start = np.where(interior, values, 0.0)
        states.append(dict(node=node, initial=initial, f_sup=f_sup, u=start[interior].copy(),
                           fields=[ScalarField(grid, start)], sweeps=0, res=0.0))
    t = s
    n_steps = 0
    for m, step in schedule:
        for _ in range(m):
            for st in states:
                u, sweeps, res = stepper.step(st["u"], t, step)
                if not np.all(np.isfinite(u)):
                    raise SolverInstabilityError(f"non-finite values at t={t + step:.6g}")
                sup = float(np.max(np.abs(u), initial=0.0))
                if sup > st["f_sup"] * 1.01 + 1e-300:
                    raise SolverInstabilityError(
                        f"sup norm {sup:.6g} exceeds 1.01*||f|| = {1.01 * st['f_sup']:.6g} at t={t + step:.6g}; "
                        "reduce dt or use the implicit scheme"
                    )
                st["u"] = u
                st["sweeps"] += sweeps
                st["res"] = max(st["res"], res)
            t += step
            n_steps += 1
        for st in states:
            full = np.zeros(grid.shape)
            full[interior] = st["u"]
            st["fields"].append(ScalarField(grid, full))
    out = []
    for st in states:
        sup = np.array([fl.sup() for fl in st["fields"]])
        out.append(Trajectory(grid, s, times.copy(), st["fields"], st["initial"], sup, n_steps,
                              st["sweeps"], st["res"], st["node"]))
    return out


def evolve(op: OperatorFamily, f: "Node | np.ndarray", s: float, t_end: float, grid: Grid,
           config: SolverConfig | None = None) -> Trajectory:
    """Solve the Cauchy-Dirichlet problem with u(s) = f and u = 0 on the boundary."""
    return evolve_many(op, [f], s, t_end, grid, config)[0]


@dataclass
class NestedResult:
    trajectory: Trajectory
    radii: tuple[float, ...]
    times: np.ndarray
    # differences[j][k] = max |u_{R_{k+1}} - u_{R_k}| on the inner box at times[j]
    differences: np.ndarray
    trajectories: list[Trajectory] = field(default_factory=list, repr=False)

    def table_rows(self):
        for t, row in zip(self.times, self.differences):
            yield (float(t), *map(float, row))


def nested_evolve(op: OperatorFamily, f: Node, s: float, t_end: float, radii: Sequence[float], h: float,
                  config: SolverConfig | None = None, center: Sequence[float] | None = None) -> NestedResult:
    """Solve on boxes of increasing half-width sharing the spacing ``h``.

    Differences between consecutive boxes are measured on the box of
    half-width ``inner_fraction * radii[0]``, where all grids share nodes.
    """
    config = config or SolverConfig()
    radii = tuple(float(r) for r in radii)
    if len(radii) < 2 or any(b <= a for a, b in zip(radii, radii[1:])):
        raise ValueError("radii must be strictly increasing (at least two)")
    grids = []
    for r in radii:
        steps = 2.0 * r / h
        n = int(round(steps)) + 1
        if abs(steps - (n - 1)) > 1e-9 * steps or n % 2 == 0:
            raise ValueError(f"radius {r} is not an even multiple of h={h}")
        grids.append(Grid(op.dimension, r, n, center))
    dt = auto_dt(op, grids[-1], s, t_end, config)
    cfg = replace(config, dt=dt)
    trajs = [evolve(op, f, s, t_end, g, cfg) for g in grids]
    lim = config.inner_fraction * radii[0]
    diffs = np.zeros((len(trajs[0].times), len(radii) - 1))
    for k in range(len(radii) - 1):
        small, big = trajs[k], trajs[k + 1]
        off = (big.grid.n - small.grid.n) // 2
        window = tuple(slice(off, off + small.grid.n) for _ in range(op.dimension))
        mask = np.ones(small.grid.shape, dtype=bool)
        for i, m in enumerate(small.grid.mesh()):
            mask &= np.abs(m - small.grid.center[i]) <= lim + 1e-9 * h
        for j in range(len(small.times)):
            a = small.fields[j].values[mask]
            b = big.fields[j].values[window][mask]
            diffs[j, k] = float(np.max(np.abs(a - b)))
    for j, row in enumerate(diffs):
        for k in range(1, len(row)):
            if row[k] > 2.0 * row[k - 1] and row[k] > 1e-13:
                warnings.warn(
                    f"box differences grew from {row[k - 1]:.3g} to {row[k]:.3g} at t={trajs[0].times[j]:.6g}; "
                    "the boxes may be too small",
                    DomainTruncationWarning,
                    stacklevel=2,
                )
    return NestedResult(trajs[-1], radii, trajs[0].times.copy(), diffs, trajs)


@dataclass
class GradientField:
    components: np.ndarray  # (d, *shape)
    norm: ScalarField


def gradient_field(traj: "Trajectory | ScalarField", index: int = -1) -> GradientField:
    """Central differences inside, second-order one-sided at boundary nodes."""
    fld = traj.fields[index] if isinstance(traj, Trajectory) else traj
    grid = fld.grid
    g = np.gradient(fld.values, grid.h, edge_order=2)
    comps = np.stack(g if isinstance(g, (list, tuple)) else [g])
    return GradientField(comps, ScalarField(grid, np.sqrt(np.sum(comps**2, axis=0))))


def hessian_field(fld: ScalarField) -> np.ndarray:
    """Central second differences, shape ``(*shape, d, d)``; zero on the boundary."""
    grid = fld.grid
    d, h, u = grid.dimension, grid.h, fld.values
    out = np.zeros(grid.shape + (d, d))
    inner = (slice(1, -1),) * d

    def shifted(offset):
        return u[tuple(slice(1 + o, grid.n - 1 + o) for o in offset)]

    center = u[inner]
    for i in range(d):
        e = [0] * d
        e[i] = 1
        em = [0] * d
        em[i] = -1
        out[inner + (i, i)] = (shifted(e) - 2.0 * center + shifted(em)) / h**2
        for j in range(i + 1, d):
            def off(si, sj):
                o = [0] * d
                o[i], o[j] = si, sj
                return shifted(o)

            v = (off(1, 1) - off(1, -1) - off(-1, 1) + off(-1, -1)) / (4.0 * h**2)
            out[inner + (i, j)] = v
            out[inner + (j, i)] = v
    return out


def write_snapshots(traj: Trajectory, directory: str, prefix: str = "u") -> list[str]:
    """One CSV per snapshot (columns x1..xd,u) plus a manifest; returns file paths."""
    os.makedirs(directory, exist_ok=True)
    pts = traj.grid.points()
    header = ",".join([f"x{i}" for i in range(1, traj.grid.dimension + 1)] + ["u"])
    files = []
    lines = ["index,time,file"]
    for k, (t, fld) in enumerate(zip(traj.times, traj.fields)):
        name = f"{prefix}_{k:04d}.csv"
        path = os.path.join(directory, name)
        np.savetxt(path, np.column_stack([pts, fld.values.ravel()]), delimiter=",", fmt="%.17g",
                   header=header, comments="")
        files.append(path)
        lines.append(f"{k},{float(t):.17g},{name}")
    manifest = os.path.join(directory, f"{prefix}_manifest.csv")
    with open(manifest, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
    files.append(manifest)
    return files
