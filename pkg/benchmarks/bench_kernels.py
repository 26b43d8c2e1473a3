"""Time the numba and numpy backends on the hot kernels.

    python benchmarks/bench_kernels.py [--repeat N]

Each case runs once to warm up (numba compiles on first call), then reports the best
of ``--repeat`` timed runs per backend.
"""
import argparse
import math
import time

import numpy as np

from safetrack import kernels
from safetrack.grid import Grid, interpolate_fields
from safetrack.hjsolver import SolverConfig, solve_hjvi
from safetrack.relsys import make_model


def _solve(name, params, grid, scheme, horizon):
    rel = make_model(name, params).relative
    cfg = SolverConfig(horizon=horizon, snapshots=2, scheme=scheme, stop_on_convergence=False)
    return lambda: solve_hjvi(rel, grid, cfg).steps


def _interp(n_points):
    g = Grid((-1.0, -1.0, -math.pi, -0.5), (1.0, 1.0, math.pi, 0.5), (31, 31, 24, 21),
             (False, False, True, False))
    rng = np.random.default_rng(0)
    fields = rng.normal(size=(3, g.size))
    X = np.column_stack([rng.uniform(-1, 1, n_points), rng.uniform(-1, 1, n_points),
                         rng.uniform(-4, 4, n_points), rng.uniform(-0.5, 0.5, n_points)])
    return lambda: interpolate_fields(g, fields, X).shape[0]


CASES = [
    ("godunov_step  dint2d 201x201", _solve("dint2d", {}, Grid((-1.0, -1.5), (1.0, 1.5), (201, 201)),
                                             "godunov", 0.5)),
    ("lf_step       dint2d 201x201", _solve("dint2d", {}, Grid((-1.0, -1.5), (1.0, 1.5), (201, 201)),
                                             "lf", 0.5)),
    ("lf_step       car5d 11x11x12x9x11",
     _solve("car5d_car3d", {}, Grid((-0.2, -0.2, -math.pi, -0.3, -2.5), (0.2, 0.2, math.pi, 0.3, 2.5),
                                    (11, 11, 12, 9, 11), (False, False, True, False, False)),
            "lf", 0.1)),
    ("interp_points 4D, 200k points", _interp(200_000)),
]


def bench(fn, repeat):
    fn()
    best = math.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    backends = kernels.available_backends()
    prev = kernels.get_backend()
    print(f"{'case':<36}" + "".join(f"{b:>12}" for b in backends) + "     speedup")
    try:
        for label, fn in CASES:
            times = {}
            for b in backends:
                kernels.set_backend(b)
                times[b] = bench(fn, args.repeat)
            row = f"{label:<36}" + "".join(f"{times[b]:>11.3f}s" for b in backends)
            if "numba" in times:
                row += f"  {times['numpy'] / times['numba']:>8.1f}x"
            print(row)
    finally:
        kernels.set_backend(prev)


if __name__ == "__main__":
    main()
