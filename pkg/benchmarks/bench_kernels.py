"""Compiled vs pure-numpy batched tridiagonal substitution.

Usage: python benchmarks/bench_kernels.py [--n 128] [--lines 128] [--repeat 20]
"""

import argparse
import timeit

import numpy as np

from acsplit import _kernels_py, kernels
from acsplit.linsolve import tridiag_factor


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=128, help="unknowns per line")
    ap.add_argument("--lines", type=int, default=128, help="number of lines")
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args()

    rng = np.random.default_rng(0)
    n, m = args.n, args.lines
    factors = tridiag_factor(-np.ones(n - 1), 4.0 + rng.random(n), -np.ones(n - 1))
    rhs = rng.standard_normal((n, m))

    impls = {"python": _kernels_py.tridiag_substitute}
    if kernels.BACKEND == "compiled":
        impls["compiled"] = kernels.tridiag_substitute
    else:
        print("compiled extension not built; timing the fallback only")

    results = {}
    for name, fn in impls.items():
        work = rhs.copy()
        t = min(timeit.repeat(lambda: fn(*factors, work), number=1, repeat=args.repeat))
        results[name] = t
        print(f"{name:9s} {t * 1e3:9.3f} ms  ({n} x {m})")
    if len(results) == 2:
        print(f"speed-up  {results['python'] / results['compiled']:9.1f}x")


if __name__ == "__main__":
    main()
