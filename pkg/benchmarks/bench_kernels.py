"""Time the numba and numpy backends of the hot kernels and check they agree.

Usage::

    python3 benchmarks/bench_kernels.py [--users 100000] [--repeat 3]

The numba column excludes the first call, which pays the compilation (or
cache-load) cost; that cost is printed separately.
"""
import argparse
import time

import numpy as np

from feedsim._accel import HAVE_NUMBA
from feedsim.recommender import factorize
from feedsim.simulator import SimConfig, draw_population, simulate_counts


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def bench_period(n_users, repeat):
    cfg = SimConfig(n_users=n_users, seed=1)
    pop = draw_population(cfg)
    q = np.full(n_users, pop.control_mean)

    def call(backend):
        return lambda: simulate_counts(pop.user_id, pop.p, q, cfg.params.theta, cfg.params, 1, cfg, backend=backend)

    rows = []
    t_np, out_np = best_of(call("numpy"), repeat)
    rows.append(("period kernel", "numpy", t_np, None))
    if HAVE_NUMBA:
        t0 = time.perf_counter()
        call("numba")()
        first = time.perf_counter() - t0
        t_nb, out_nb = best_of(call("numba"), repeat)
        same = all(np.array_equal(out_np[k], out_nb[k], equal_nan=True) for k in out_np)
        rows.append(("period kernel", "numba", t_nb, first))
        print(f"period kernel outputs identical across backends: {same}")
    return rows


def bench_svd(shape, repeat):
    rng = np.random.default_rng(0)
    m = rng.poisson(1.0, size=shape).astype(float)
    rows = []
    t_np, f_np = best_of(lambda: factorize(m, backend="numpy"), repeat)
    rows.append((f"jacobi svd {shape[0]}x{shape[1]}", "numpy", t_np, None))
    if HAVE_NUMBA:
        t0 = time.perf_counter()
        factorize(m, backend="numba")
        first = time.perf_counter() - t0
        t_nb, f_nb = best_of(lambda: factorize(m, backend="numba"), repeat)
        gap = np.max(np.abs(f_np.singular_values - f_nb.singular_values))
        rows.append((f"jacobi svd {shape[0]}x{shape[1]}", "numba", t_nb, first))
        print(f"jacobi svd max singular value gap across backends: {gap:.2e}")
    return rows


def main():
    ap = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    ap.add_argument("--users", type=int, default=100_000)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    if not HAVE_NUMBA:
        print("numba unavailable or disabled; timing the numpy backend only")
    rows = bench_period(args.users, args.repeat) + bench_svd((400, 40), args.repeat)
    print(f"{'kernel':<22}{'backend':<9}{'best (s)':>10}{'first call (s)':>16}")
    for name, backend, t, first in rows:
        f = "" if first is None else f"{first:.3f}"
        print(f"{name:<22}{backend:<9}{t:>10.4f}{f:>16}")


if __name__ == "__main__":
    main()
