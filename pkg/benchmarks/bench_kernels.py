"""Compiled core vs numpy fallback on the hot kernels.

    python3 benchmarks/bench_kernels.py [--repeat 20] [--json out.json]

Each kernel runs on identical inputs under both backends; the table shows
the median wall time per call, the speedup and the max abs difference of
the outputs (the two backends must agree to rounding).
"""
import argparse
import json
import math
import statistics
import time

import numpy as np

from kdvb_shock import kernels
from kdvb_shock.flux import LineGrid, ShockSetup, burgers, central_stencil
from kdvb_shock.fullline import ImexStepper, StaticAnsatz, _banded_from_stencil, linear_stencil
from kdvb_shock.profile import solve_profile


def _time(fn, repeat):
    fn()  # warm-up
    out = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        out.append(time.perf_counter() - t0)
    return statistics.median(out)


def cases(n=6401, modes=33, n_eval=4000):
    rng = np.random.default_rng(1)
    v = rng.standard_normal(n)
    grid = LineGrid(80.0, n - 1)
    setup = ShockSetup(1.0, -1.0, 0.1, 1.0, burgers())
    st = linear_stencil(setup, grid.h)
    d1 = central_stencil(1, 4) / grid.h
    ab = _banded_from_stencil(st, n, 0.005)
    a = (rng.standard_normal(modes) + 1j * rng.standard_normal(modes)) / np.arange(1, modes + 1) ** 2
    x = rng.uniform(-40, 40, n_eval)
    kappa = 2 * math.pi / (math.pi * math.sqrt(2))
    prof = solve_profile(setup)
    ans = StaticAnsatz(prof, grid, 0.0)
    v_small = 1e-3 * np.exp(-grid.nodes ** 2)

    def make(name):
        solver = kernels.BandedSolver(ab, 3, backend=name)
        stepper = ImexStepper(setup, grid, 0.01, backend=name)
        return {
            "stencil_apply(7pt)": lambda: kernels.stencil_apply(v, st, backend=name),
            "stencil_apply(d1)": lambda: kernels.stencil_apply(v, d1, backend=name),
            "trig_series": lambda: kernels.trig_series(a, kappa, x, 1, backend=name),
            "banded_factor": lambda: kernels.BandedSolver(ab, 3, backend=name),
            "banded_solve": lambda: solver.solve(v),
            "cumulative_trapezoid": lambda: kernels.cumulative_trapezoid(v, grid.h, backend=name),
            "imex_step": lambda: stepper.step(v_small, 0.0, ans),
        }

    return make


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeat", type=int, default=20)
    p.add_argument("--n", type=int, default=6401, help="grid nodes")
    p.add_argument("--json", help="write results here")
    args = p.parse_args(argv)

    have = kernels.available_backends()
    make = cases(args.n)
    py = make("python")
    comp = make("compiled") if "compiled" in have else None
    if comp is None:
        print("compiled extension not built; timing the numpy fallback only")

    rows = []
    print(f"{'kernel':24s} {'python ms':>10s} {'compiled ms':>12s} {'speedup':>8s} {'max diff':>10s}")
    for key, fn in py.items():
        tp = _time(fn, args.repeat)
        row = {"kernel": key, "python_s": tp}
        if comp is not None:
            tc = _time(comp[key], args.repeat)
            r_py, r_c = fn(), comp[key]()
            # factorizations differ in representation; banded_solve compares their use
            diff = float(np.max(np.abs(r_py - r_c))) if isinstance(r_py, np.ndarray) else None
            row.update(compiled_s=tc, speedup=tp / tc, max_diff=diff)
            shown = f"{diff:10.2e}" if diff is not None else f"{'n/a':>10s}"
            print(f"{key:24s} {1e3 * tp:10.3f} {1e3 * tc:12.3f} {tp / tc:8.2f} {shown}")
        else:
            print(f"{key:24s} {1e3 * tp:10.3f}")
        rows.append(row)
    if args.json:
        with open(args.json, "w") as fh:
            json.dump({"n": args.n, "repeat": args.repeat, "results": rows}, fh, indent=2)


if __name__ == "__main__":
    main()
