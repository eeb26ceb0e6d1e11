"""Compare the compiled and pure-Python SSOR kernels.

Times one implicit-step solve on the block2d preset for several grid sizes
and a short full evolve, then checks that both backends agree.

    python3 benchmarks/bench_kernels.py [--sizes 41,81,161] [--repeat 3]
"""
from __future__ import annotations

import argparse
import time

import numpy as np
import scipy.sparse as sp

from evolgrad import _backend, presets
from evolgrad.solver import Grid, SolverConfig, assemble_generator, evolve, sample


def _system(n: int):
    op = presets.build("block2d")
    grid = Grid(2, 3.0, n)
    a = assemble_generator(op, grid, 1.0).interior
    m = (sp.identity(a.shape[0], format="csr") - grid.h**2 * a).tocsr()
    m.sort_indices()
    rhs = sample(op.parse("exp(-norm2(x))"), grid, 1.0)[grid.interior_mask()]
    return (np.ascontiguousarray(m.indptr, dtype=np.intp), np.ascontiguousarray(m.indices, dtype=np.int32),
            np.ascontiguousarray(m.data), rhs)


def _best(fn, repeat: int) -> tuple[float, object]:
    best, out = np.inf, None
    for _ in range(repeat):
        start = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - start)
    return best, out


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--sizes", default="41,81,161")
    parser.add_argument("--repeat", type=int, default=3)
    args = parser.parse_args()
    names = sorted(_backend.BACKENDS)
    print(f"backends: {', '.join(names)} (import-time default: {_backend.NAME})")
    print(f"{'n':>5} {'unknowns':>9} " + " ".join(f"{b + ' [s]':>14}" for b in names) + f" {'speedup':>8} {'max diff':>9}")
    for n in (int(v) for v in args.sizes.split(",")):
        indptr, indices, data, rhs = _system(n)
        times, sols = {}, {}
        for b in names:
            kernel = _backend.get(b)

            def solve():
                x = np.zeros_like(rhs)
                kernel.ssor_solve(indptr, indices, data, rhs, x, 1e-10, 50000, 1.0)
                return x

            times[b], sols[b] = _best(solve, args.repeat)
        speed = times["python"] / times["cython"] if "cython" in times else float("nan")
        diff = max(np.max(np.abs(sols[b] - sols[names[0]])) for b in names)
        print(f"{n:>5} {len(rhs):>9} " + " ".join(f"{times[b]:>14.4f}" for b in names) + f" {speed:>8.1f} {diff:>9.1e}")

    op = presets.build("block2d")
    f = op.parse("exp(-norm2(x))")
    grid = Grid(2, 3.0, 81)
    print("\nfull evolve, block2d, n=81, t in [1, 1.25]")
    finals = {}
    for b in names:
        cfg = SolverConfig(backend=b)
        elapsed, traj = _best(lambda: evolve(op, f, 1.0, 1.25, grid, cfg), 1)
        finals[b] = traj.fields[-1].values
        print(f"  {b:>7}: {elapsed:8.3f} s, {traj.steps} steps, {traj.sweeps} sweeps")
    if len(finals) > 1:
        print(f"  max difference between backends: {np.max(np.abs(finals['cython'] - finals['python'])):.1e}")


if __name__ == "__main__":
    main()
