"""Time the compiled and pure-Python kernels on the workloads the solvers hand them.

    python benchmarks/bench_kernels.py [--repeat 5]

Each row reports the best-of-``repeat`` wall time per call and the speed-up
of the compiled backend over the fallback. Results are checked for
agreement before timing.
"""
from __future__ import annotations

import argparse
import timeit
from contextlib import contextmanager

import numpy as np

from hflassign import _kernels
from hflassign.data import GroupSpec, random_groups
from hflassign.solver import brute_force_optimal, build_epigraph_lp, equal_edge_size, simplex_solve

KERNELS = ("theta_numerator", "enumerate_best", "simplex_iterate")


@contextmanager
def use_backend(module):
    import hflassign.population as population

    saved = {k: getattr(_kernels, k) for k in KERNELS}, population.theta_numerator
    for k in KERNELS:
        setattr(_kernels, k, getattr(module, k))
    population.theta_numerator = module.theta_numerator
    try:
        yield
    finally:
        for k, v in saved[0].items():
            setattr(_kernels, k, v)
        population.theta_numerator = saved[1]


def workloads():
    rng = np.random.default_rng(0)
    counts = rng.integers(0, 50, size=(10, 10))

    small = random_groups(GroupSpec(num_groups=4, num_edges=3, classes=4, max_size=5, seed=1))
    S_small = equal_edge_size(small.population, 3)

    lp_inst = random_groups(GroupSpec(num_groups=10, num_edges=5, classes=10, seed=2))
    model = build_epigraph_lp(lp_inst.population, lp_inst.topology, equal_edge_size(lp_inst.population, 5))

    return {
        "theta_numerator 10x10": lambda: _kernels.theta_numerator(counts),
        "brute force 4 groups / 3 edges": lambda: brute_force_optimal(
            small.population, small.topology, equal_size=S_small
        ).objective_value,
        "simplex on a 10-group / 5-edge LP": lambda: round(simplex_solve(model).objective_value, 9),
    }


def main(argv=None) -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    available = _kernels.backends()
    if "cython" not in available:
        print("compiled backend not built; timing the fallback only")
    jobs = workloads()
    print(f"{'workload':36s} " + " ".join(f"{b:>12s}" for b in available) + "   speed-up")
    for name, fn in jobs.items():
        times, results = {}, {}
        for b, mod in available.items():
            with use_backend(mod):
                results[b] = fn()
                calls = max(1, int(0.2 / max(timeit.timeit(fn, number=1), 1e-7)))
                times[b] = min(timeit.repeat(fn, number=calls, repeat=args.repeat)) / calls
        if len(set(map(repr, results.values()))) != 1:
            raise SystemExit(f"{name}: backends disagree {results}")
        cells = " ".join(f"{times[b] * 1e3:10.3f}ms" for b in available)
        ratio = f"{times['python'] / times['cython']:9.1f}x" if "cython" in times else ""
        print(f"{name:36s} {cells}   {ratio}")


if __name__ == "__main__":
    main()
