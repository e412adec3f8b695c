"""Benchmark the compiled kernels against the pure NumPy twin.

Times the two hot paths on Fibonacci grids of increasing size:

  * build_stencils: neighbor selection + finite difference weights
  * evaluate_operator: one full operator sweep at a smooth test potential

Usage:
    python3 benchmarks/bench_backends.py [--sizes 2000,8000,20000] [--repeat 5]
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from otreflector import backend, density, monge_ampere, optics, sphere_grid, stencil
from otreflector.errors import OTReflectorError


def best_of(repeat, fn, *args):
    best = np.inf
    out = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best, out


def bench_build(kern, grid, table_params, repeat):
    cap_flat, cap_off, dtheta, n_pairs = table_params
    t, _ = best_of(repeat, kern.build_stencils, grid.points, grid.e1,
                   grid.e2, cap_flat, cap_off, grid.spacing, dtheta,
                   n_pairs, 0, 2, 1)
    return t

def bench_evaluate(kern, grid, table, f1, f2, u, repeat):
    grad2, lap = stencil.gradient_and_laplacian(table, u)
    grad3 = optics.ambient_gradient(grad2, grid.e1, grid.e2)
    y = optics.optical_map(grid.points, grad3)
    p2 = np.einsum("ij,ij->i", grad2, grad2)
    rhs = f1 * ((p2 + 1.0) ** 2 / (4.0 * f2[grid.nearest(y)]))
    eps1 = np.full((grid.n, table.n_directions), 1e-3)
    t, _ = best_of(repeat, kern.evaluate_operator, grid.points, y, u,
                   table.nbr, table.w2, eps1, lap, rhs, table.n_pairs, 1)
    return t


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", default="2000,8000,20000",
                    help="comma-separated grid sizes")
    ap.add_argument("--repeat", type=int, default=5,
                    help="repetitions; the fastest run is reported")
    args = ap.parse_args()
    sizes = [int(s) for s in args.sizes.split(",")]

    kernels = {"python": backend.kernels("python")}
    try:
        kernels["compiled"] = backend.kernels("compiled")
    except OTReflectorError:
        print("compiled extension not available; benchmarking NumPy only")

    header = f"{'n':>8} {'path':>18}" + "".join(f"{k:>12}" for k in kernels)
    if len(kernels) == 2:
        header += f"{'speedup':>10}"
    print(header)

    for n in sizes:
        grid = sphere_grid.fibonacci_grid(n)
        table = stencil.build_stencil_table(grid)
        ds = table.directions()
        cap_flat, cap_off = grid.cap_neighbors_all(np.sqrt(grid.spacing))
        f1 = density.builtin("donut_f1", grid)
        f2r = density.builtin("donut_f2", grid)
        _, f2 = density.preprocess_pair(f1, f2r, grid, table, eps=0.3)
        rng = np.random.default_rng(0)
        u = np.exp(grid.points @ (rng.standard_normal(3) * 0.3)) * 0.5

        rows = {
            "build_stencils": {
                name: bench_build(kern, grid,
                                  (cap_flat, cap_off, ds.dtheta, ds.n_pairs),
                                  args.repeat)
                for name, kern in kernels.items()},
            "evaluate_operator": {
                name: bench_evaluate(kern, grid, table, f1, f2, u, args.repeat)
                for name, kern in kernels.items()},
        }
        for path, times in rows.items():
            line = f"{n:>8} {path:>18}"
            for name in kernels:
                line += f"{times[name] * 1e3:>10.1f}ms"
            if len(kernels) == 2:
                line += f"{times['python'] / times['compiled']:>9.1f}x"
            print(line)


if __name__ == "__main__":
    main()
