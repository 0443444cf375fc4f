"""Time the numba kernels against the numpy/LAPACK fallback.

    python benchmarks/bench_kernels.py [--level 6] [--rhs 200] [--repeat 5]

Each kernel is run once per backend to warm up (numba compiles or loads
its cache), then timed ``--repeat`` times; the best time is reported.
Results of the two backends are compared so a speed-up never hides a
wrong answer.
"""
import argparse
import time

import numpy as np

from nested_spde import use_backend
from nested_spde.assembly import CoefficientField, assemble_form, element_matrices, laplacian
from nested_spde.mesh import build_unit_square
from nested_spde.sparse import cholesky


def best_of(fn, repeat):
    fn()
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--level", type=int, default=6)
    p.add_argument("--rhs", type=int, default=200)
    p.add_argument("--repeat", type=int, default=5)
    args = p.parse_args()

    mesh = build_unit_square(args.level)
    A = assemble_form(mesh, laplacian(1.0))
    B = np.random.default_rng(0).standard_normal((A.shape[0], args.rhs))
    variable = CoefficientField(lambda x: 1 + x[:, 0], np.array([0.5, 0.0]), 1.0)
    print(f"level {args.level}: {A.shape[0]} dofs, {args.rhs} right-hand sides")

    results, outputs = {}, {}
    for name in ("numba", "numpy"):
        with use_backend(name):
            factor = cholesky(A)
            outputs[name] = (factor.solve(B), factor.apply_sqrt(B))
            results[name] = {
                "assembly": best_of(lambda: element_matrices(mesh, variable), args.repeat),
                "cholesky": best_of(lambda: cholesky(A), args.repeat),
                "solve": best_of(lambda: factor.solve(B), args.repeat),
                "L @ z": best_of(lambda: factor.apply_sqrt(B), args.repeat),
            }

    for a, b in zip(outputs["numba"], outputs["numpy"]):
        err = np.max(np.abs(a - b)) / np.max(np.abs(b))
        assert err < 1e-10, f"backends disagree ({err:.2e})"

    print(f"{'kernel':<10}{'numba [ms]':>12}{'numpy [ms]':>12}{'speed-up':>10}")
    for kernel in results["numba"]:
        tn, tp = results["numba"][kernel], results["numpy"][kernel]
        print(f"{kernel:<10}{1e3 * tn:>12.2f}{1e3 * tp:>12.2f}{tp / tn:>10.2f}")


if __name__ == "__main__":
    main()
