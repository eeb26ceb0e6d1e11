"""Eigenvalues of small symmetric matrices, batched over leading axes.

Closed forms are used for d <= 3.  The trigonometric 3x3 formula loses
about half the digits when two eigenvalues nearly coincide (``acos`` near
+-1), so those matrices are handed to cyclic Jacobi, which is accurate to
rounding for any d.
"""
from __future__ import annotations

import numpy as np

__all__ = ["sym_eigvalsh", "lambda_min", "lambda_max", "jacobi_eigvalsh"]

JACOBI_TOL = 1e-12
# Below this distance of |r| from 1 the trigonometric formula is not trusted.
_NEAR_DEGENERATE = 1e-6


def jacobi_eigvalsh(a: np.ndarray, tol: float = JACOBI_TOL, max_sweeps: int = 100) -> np.ndarray:
    """Cyclic Jacobi eigenvalues, ascending, for a batch of symmetric matrices.

    Iterates until the off-diagonal Frobenius norm is below
    ``tol * max(1, ||A||_F)`` for every matrix in the batch.
    """
    a = np.array(a, dtype=float, copy=True)
    d = a.shape[-1]
    if d == 1:
        return a[..., 0, :].copy()
    batch = a.shape[:-2]
    a = a.reshape((-1, d, d))
    scale = np.maximum(1.0, np.sqrt(np.einsum("nij,nij->n", a, a)))
    offdiag = ~np.eye(d, dtype=bool)
    for _ in range(max_sweeps):
        off = np.sqrt(np.sum(a[:, offdiag] ** 2, axis=1))
        if np.all(off <= tol * scale):
            break
        for p in range(d - 1):
            for q in range(p + 1, d):
                apq = a[:, p, q]
                active = apq != 0.0
                if not np.any(active):
                    continue
                app = a[:, p, p]
                aqq = a[:, q, q]
                theta = np.zeros_like(apq)
                theta[active] = (aqq[active] - app[active]) / (2.0 * apq[active])
                t = np.where(
                    active,
                    np.sign(theta + (theta == 0)) / (np.abs(theta) + np.sqrt(theta * theta + 1.0)),
                    0.0,
                )
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                # A <- J^T A J with J the (p, q) rotation
                ap = a[:, :, p].copy()
                aq = a[:, :, q].copy()
                a[:, :, p] = c[:, None] * ap - s[:, None] * aq
                a[:, :, q] = s[:, None] * ap + c[:, None] * aq
                ap = a[:, p, :].copy()
                aq = a[:, q, :].copy()
                a[:, p, :] = c[:, None] * ap - s[:, None] * aq
                a[:, q, :] = s[:, None] * ap + c[:, None] * aq
    else:
        raise RuntimeError("Jacobi eigenvalue iteration did not converge")
    w = np.sort(np.diagonal(a, axis1=1, axis2=2), axis=1)
    return w.reshape(batch + (d,))


def _eig2(a):
    p = 0.5 * (a[..., 0, 0] + a[..., 1, 1])
    r = np.hypot(0.5 * (a[..., 0, 0] - a[..., 1, 1]), a[..., 0, 1])
    return np.stack([p - r, p + r], axis=-1)


def _eig3(a):
    q = np.trace(a, axis1=-2, axis2=-1) / 3.0
    b = a - q[..., None, None] * np.eye(3)
    p2 = np.einsum("...ij,...ij->...", b, b) / 6.0
    p = np.sqrt(p2)
    out = np.repeat(q[..., None], 3, axis=-1)
    nz = p > 0
    if not np.any(nz):
        return out
    bn = b[nz] / p[nz][:, None, None]
    r = np.clip(np.linalg.det(bn) / 2.0, -1.0, 1.0)
    phi = np.arccos(r) / 3.0
    pn = p[nz]
    qn = q[nz]
    e1 = qn + 2.0 * pn * np.cos(phi)
    e3 = qn + 2.0 * pn * np.cos(phi + 2.0 * np.pi / 3.0)
    e2 = 3.0 * qn - e1 - e3
    vals = np.sort(np.stack([e3, e2, e1], axis=-1), axis=-1)
    bad = 1.0 - np.abs(r) < _NEAR_DEGENERATE
    if np.any(bad):
        vals[bad] = jacobi_eigvalsh(a[nz][bad])
    out[nz] = vals
    return out


def sym_eigvalsh(a) -> np.ndarray:
    """Ascending eigenvalues of symmetric ``(..., d, d)`` matrices."""
    a = np.asarray(a, dtype=float)
    d = a.shape[-1]
    if a.shape[-2] != d:
        raise ValueError("expected square matrices")
    if d == 1:
        return a[..., 0, :].copy()
    if d == 2:
        return _eig2(a)
    if d == 3:
        return _eig3(a)
    return jacobi_eigvalsh(a)


def lambda_min(a) -> np.ndarray:
    return sym_eigvalsh(a)[..., 0]


def lambda_max(a) -> np.ndarray:
    return sym_eigvalsh(a)[..., -1]
