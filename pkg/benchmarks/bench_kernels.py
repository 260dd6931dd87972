"""Time the numba and pure-numpy Monte-Carlo kernels side by side.

    python3 benchmarks/bench_kernels.py [--paths 20000] [--steps 250] [--repeat 5]

Prints best-of-N wall time per kernel and backend, and the max abs
difference between backends (they share arithmetic order, so it should be 0
or a few ulps).
"""

import argparse
import time

import numpy as np

from sabrnet import kernels


def best_of(fn, repeat):
    best = float("inf")
    for _ in range(repeat):
        t = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t)
    return best, out


def bench_euler(n_paths, steps, repeat):
    rng = np.random.default_rng(0)
    z = rng.standard_normal((steps, 2, n_paths // 2))
    h = 1.0 / steps

    def run(kernel):
        def go():
            f = np.ones(n_paths)
            a = np.full(n_paths, 0.3)
            kernel(f, a, z, np.sqrt(h), 0.8, -0.5, True)
            return f, a
        return go

    res = {"numpy": best_of(run(kernels.euler_block_numpy), repeat)}
    if kernels.euler_block_jit is not None:
        run(kernels.euler_block_jit)()  # compile
        res["numba"] = best_of(run(kernels.euler_block_jit), repeat)
    return res


def bench_payoff(n_paths, n_strikes, repeat):
    rng = np.random.default_rng(1)
    terminals = np.exp(0.3 * rng.standard_normal(n_paths) - 0.045)
    strikes = np.linspace(0.5, 1.8, n_strikes)
    res = {"numpy": best_of(lambda: kernels.payoff_stats_numpy(terminals, strikes, 1.0, True), repeat)}
    if kernels.payoff_stats_jit is not None:
        kernels.payoff_stats_jit(terminals, strikes, 1.0, True)
        res["numba"] = best_of(lambda: kernels.payoff_stats_jit(terminals, strikes, 1.0, True), repeat)
    return res


def report(name, res, work, unit):
    for backend, (t, _) in res.items():
        print(f"{name:<14}{backend:<7}{t * 1e3:10.2f} ms  {work / t:12.3e} {unit}/s")
    if len(res) == 2:
        a = res["numpy"][1]
        b = res["numba"][1]
        diff = max(float(np.max(np.abs(x - y))) for x, y in zip(a, b))
        print(f"{name:<14}speedup {res['numpy'][0] / res['numba'][0]:.2f}x, max |numpy - numba| = {diff:.3e}")


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--paths", type=int, default=20000)
    p.add_argument("--steps", type=int, default=250)
    p.add_argument("--strikes", type=int, default=20)
    p.add_argument("--repeat", type=int, default=5)
    a = p.parse_args()
    if kernels.euler_block_jit is None:
        print("numba disabled or missing; timing numpy only")
    report("euler_block", bench_euler(a.paths, a.steps, a.repeat), a.paths * a.steps, "path-steps")
    report("payoff_stats", bench_payoff(a.paths, a.strikes, a.repeat), a.paths * a.strikes, "payoffs")


if __name__ == "__main__":
    main()
