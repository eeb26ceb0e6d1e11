"""Sampled checks of the structural hypotheses and the constant c0.

Every check evaluates the relevant quantity on a space-time sample (tensor
grid plus seeded uniform points) and reduces it to an extremal value and a
witness.  Ties are broken towards the lexicographically smallest
``(t, x1, .., xd)`` so the result does not depend on evaluation order.
These are evidence, not proofs.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import expr
from .expr import Node
from .linalg import lambda_max, lambda_min
from .operator import OperatorFamily, eta_values, eval_at, eval_fields, generator_expression
from .reports import ConditionReport

__all__ = [
    "SampleRegion",
    "sample_points",
    "check_ellipticity",
    "algebraic_tensor",
    "algebraic_residual",
    "check_algebraic",
    "dissipativity_matrix",
    "dissipativity_matrices",
    "estimate_c0",
    "check_lyapunov",
    "run_checks",
]

DEFAULT_SEED = 42


@dataclass(frozen=True)
class SampleRegion:
    t_range: tuple[float, float]
    lo: tuple[float, ...]
    hi: tuple[float, ...]
    space_counts: tuple[int, ...]
    time_count: int = 7
    n_random: int = 1000
    seed: int = DEFAULT_SEED

    def __post_init__(self):
        if not (len(self.lo) == len(self.hi) == len(self.space_counts)):
            raise ValueError("lo, hi and space_counts must have the same length")
        if any(a >= b for a, b in zip(self.lo, self.hi)):
            raise ValueError("box needs lo < hi on every axis")
        if self.t_range[0] > self.t_range[1]:
            raise ValueError("t_range must be ordered")
        if min(self.space_counts) < 2 or self.time_count < 1:
            raise ValueError("need at least 2 samples per space axis and 1 in time")
        if self.t_range[0] == self.t_range[1] and self.time_count != 1:
            object.__setattr__(self, "time_count", 1)

    @property
    def dimension(self) -> int:
        return len(self.lo)

    @classmethod
    def cube(cls, half_width: float, t_range, dimension: int, *, n_space: int = 11, n_time: int = 7,
             n_random: int = 1000, seed: int = DEFAULT_SEED, center=None) -> "SampleRegion":
        c = np.zeros(dimension) if center is None else np.asarray(center, dtype=float)
        return cls(
            t_range=(float(t_range[0]), float(t_range[1])),
            lo=tuple(float(v) for v in c - half_width),
            hi=tuple(float(v) for v in c + half_width),
            space_counts=(n_space,) * dimension,
            time_count=n_time,
            n_random=n_random,
            seed=seed,
        )


def sample_points(region: SampleRegion) -> tuple[np.ndarray, np.ndarray]:
    """Tensor grid followed by ``n_random`` uniform points; returns ``(t, x)``."""
    axes = [np.linspace(*region.t_range, region.time_count)]
    axes += [np.linspace(a, b, n) for a, b, n in zip(region.lo, region.hi, region.space_counts)]
    mesh = np.meshgrid(*axes, indexing="ij")
    grid = np.stack([m.ravel() for m in mesh], axis=-1)
    if region.n_random:
        rng = np.random.default_rng(region.seed)
        lo = np.array([region.t_range[0], *region.lo])
        hi = np.array([region.t_range[1], *region.hi])
        extra = rng.uniform(lo, hi, size=(region.n_random, len(lo)))
        grid = np.concatenate([grid, extra])
    return grid[:, 0].copy(), grid[:, 1:].copy()


def _witness(values: np.ndarray, t: np.ndarray, x: np.ndarray, kind: str):
    if np.any(np.isnan(values)):
        bad = int(np.flatnonzero(np.isnan(values))[0])
        raise FloatingPointError(f"NaN value at t={t[bad]!r}, x={x[bad].tolist()!r}")
    target = values.max() if kind == "max" else values.min()
    idx = np.flatnonzero(values == target)
    keys = tuple(x[idx, i] for i in reversed(range(x.shape[1]))) + (t[idx],)
    best = idx[np.lexsort(keys)[0]]
    return float(target), float(t[best]), tuple(float(v) for v in x[best])


def _fields(op: OperatorFamily, t, x, derivatives=True):
    try:
        return eval_fields(op, t, x.T, derivatives=derivatives)
    except expr.ExpressionDomainError:
        # Re-evaluate point by point to report where it fails.
        for ti, xi in zip(t, x):
            eval_at(op, ti, xi)
        raise


def check_ellipticity(op: OperatorFamily, region: SampleRegion) -> ConditionReport:
    """Smallest eigenvalue of Q over the sample (an estimate of eta_0 from above)."""
    t, x = sample_points(region)
    Q = _fields(op, t, x, derivatives=False).Q
    lam = lambda_min(Q)
    value, wt, wx = _witness(lam, t, x, "min")
    report = ConditionReport("ellipticity", bool(value > 0), value, wt, wx, len(t), tol=0.0,
                             eta_mode="lambda-min", seed=region.seed)
    if op.eta is not None:
        user = eta_values(op, t, x.T, Q, "user-expression")
        report.details["user_eta_min"] = float(user.min())
        report.details["user_eta_admissible"] = bool(np.all(user <= lam + 1e-12 * np.maximum(1, np.abs(lam))))
    return report


def algebraic_tensor(dq: np.ndarray) -> np.ndarray:
    """T_kij = D_k q_ij + D_i q_kj + D_j q_ik from ``dq[..., k, i, j]``."""
    return dq + np.swapaxes(dq, -3, -2) + np.swapaxes(dq, -3, -1)


def algebraic_residual(op: OperatorFamily, t: float, x: Sequence[float]) -> float:
    """max over (i, j, k) of |D_k q_ij + D_i q_kj + D_j q_ik| at one point."""
    return float(np.max(np.abs(algebraic_tensor(eval_at(op, t, x).dq))))


def check_algebraic(op: OperatorFamily, region: SampleRegion, tol: float = 1e-10) -> ConditionReport:
    t, x = sample_points(region)
    dq = _fields(op, t, x).dq
    res = np.max(np.abs(algebraic_tensor(dq)).reshape(len(t), -1), axis=1)
    value, wt, wx = _witness(res, t, x, "max")
    return ConditionReport("algebraic", bool(value <= tol), value, wt, wx, len(t), tol=tol, seed=region.seed)


def dissipativity_matrices(dq: np.ndarray, db: np.ndarray, eta: np.ndarray) -> np.ndarray:
    """M = S + sym(grad b) with S_kl = sum_ij D_k q_ij D_l q_ij / (2 eta)."""
    s = np.einsum("...kij,...lij->...kl", dq, dq) / (2.0 * eta[..., None, None])
    return s + 0.5 * (db + np.swapaxes(db, -1, -2))


def dissipativity_matrix(op: OperatorFamily, t: float, x: Sequence[float], eta_mode: str = "lambda-min") -> np.ndarray:
    """The symmetric matrix whose quadratic form is the left side of the c0 condition."""
    pe = eval_at(op, t, x)
    eta = eta_values(op, float(t), [np.float64(v) for v in x], pe.Q, eta_mode)
    if not eta > 0:
        raise ValueError(f"degenerate ellipticity eta={float(eta)!r} at t={t!r}, x={list(x)!r}")
    return dissipativity_matrices(pe.dq, pe.db, np.asarray(eta))


def estimate_c0(op: OperatorFamily, region: SampleRegion, eta_mode: str = "lambda-min") -> ConditionReport:
    """Empirical c0: the largest eigenvalue of M over the sample."""
    t, x = sample_points(region)
    f = _fields(op, t, x)
    eta = eta_values(op, t, x.T, f.Q, eta_mode)
    if np.any(eta <= 0):
        bad = int(np.flatnonzero(eta <= 0)[0])
        raise ValueError(f"degenerate ellipticity eta={eta[bad]!r} at t={t[bad]!r}, x={x[bad].tolist()!r}")
    lam = lambda_max(dissipativity_matrices(f.dq, f.db, eta))
    value, wt, wx = _witness(lam, t, x, "max")
    return ConditionReport("c0", bool(np.isfinite(value)), value, wt, wx, len(t), eta_mode=eta_mode, seed=region.seed)


def check_lyapunov(op: OperatorFamily, phi: Node, gamma: float, region: SampleRegion,
                   tol: float = 1e-9) -> ConditionReport:
    """max of (A(t)phi)/phi over the sample compared with ``gamma``."""
    t, x = sample_points(region)
    phi_v = expr.evaluate_array(phi, t, x.T)
    if np.any(phi_v <= 0):
        bad = int(np.flatnonzero(phi_v <= 0)[0])
        raise ValueError(f"Lyapunov function is not positive at t={t[bad]!r}, x={x[bad].tolist()!r}")
    ratio = expr.evaluate_array(generator_expression(op, phi), t, x.T) / phi_v
    value, wt, wx = _witness(ratio, t, x, "max")
    report = ConditionReport("lyapunov", bool(value <= gamma + tol * max(1.0, abs(gamma))), value, wt, wx,
                             len(t), tol=tol, seed=region.seed)
    report.details["gamma"] = float(gamma)
    report.notes.append("radial unboundedness of phi is assumed, not checked")
    return report


def run_checks(op: OperatorFamily, region: SampleRegion, eta_mode: str = "lambda-min",
               phi: Node | None = None, gamma: float | None = None, tol: float = 1e-10) -> list[ConditionReport]:
    """Ellipticity, algebraic condition, c0 and (when available) Lyapunov."""
    reports = [check_ellipticity(op, region), check_algebraic(op, region, tol=tol), estimate_c0(op, region, eta_mode)]
    phi = phi if phi is not None else op.lyapunov
    gamma = gamma if gamma is not None else op.lyapunov_gamma
    if phi is not None and gamma is not None:
        reports.append(check_lyapunov(op, phi, gamma, region))
    return reports
