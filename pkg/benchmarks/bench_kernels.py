#!/usr/bin/env python3
"""Benchmark: compiled core vs pure-Python kernels.

Times the two hot loops on the bundled scenario at a few horizons and
prints a comparison table. Run as ``python benchmarks/bench_kernels.py``;
pass ``--full`` to include the complete ten-second scenario on the
Python backend (slow).
"""

import argparse
import time

import numpy as np

import switchpred as sp
from switchpred import _core_py

try:
    from switchpred import _core
except ImportError:
    _core = None


def time_call(fn, *args, repeat=3):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def bench_predictor_sweep(backend, part, x0, u, h):
    n = part.n
    vals = np.empty((len(u) + 1, n))
    vals[0] = x0
    modes = np.empty(len(u) + 1, dtype=np.int64)
    return time_call(
        backend.predictor_sweep, part.A_stack, part.B_stack, part.P_stack,
        x0, u, h, vals, modes,
    )


def bench_closed_loop(backend, part, x0, h, horizon, delay=1.0):
    N = int(round(delay / h))
    M = int(round(horizon / h))
    u_all = np.zeros(M + N + 1)
    X = np.zeros((M + 1, part.n))
    X[0] = x0
    U = np.zeros(M + 1)
    Pt = np.zeros((M + 1, part.n))
    sig = np.zeros(M + 1, dtype=np.int64)
    sigp = np.zeros(M + 1, dtype=np.int64)
    info = np.zeros(4, dtype=np.int64)

    def run():
        u_all[:] = 0.0
        X[1:] = 0.0
        backend.closed_loop_sweep(
            part.A_stack, part.B_stack, part.K_stack, part.P_stack,
            part.A_stack, 0, u_all, X, U, sig, Pt, sigp,
            h, 1e-3, 1e3, 1e12, info,
        )

    return time_call(run, repeat=2)


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--full", action="store_true",
                        help="also run the 10 s scenario on the Python backend")
    args = parser.parse_args()

    part, _ = sp.system_from_dict(sp.preset_config("two_mode_tod"))
    x0 = np.array([2.0, -1.0])
    h = 1e-3
    u = np.zeros(1000)

    backends = [("python", _core_py)]
    if _core is not None:
        backends.insert(0, ("compiled", _core))

    print(f"{'kernel':<34}{'backend':<10}{'time':>12}")
    rows = {}
    for name, backend in backends:
        t = bench_predictor_sweep(backend, part, x0, u, h)
        rows.setdefault("predictor sweep (N=1000)", {})[name] = t
        print(f"{'predictor sweep (N=1000)':<34}{name:<10}{t * 1e3:>10.2f} ms")
    for name, backend in backends:
        t = bench_closed_loop(backend, part, x0, h, 1.0)
        rows.setdefault("closed loop (T=1 s)", {})[name] = t
        print(f"{'closed loop (T=1 s)':<34}{name:<10}{t * 1e3:>10.2f} ms")
    for name, backend in backends:
        if name == "python" and not args.full:
            print(f"{'closed loop (T=10 s)':<34}{name:<10}{'skipped':>12} "
                  "(use --full)")
            continue
        t = bench_closed_loop(backend, part, x0, h, 10.0)
        rows.setdefault("closed loop (T=10 s)", {})[name] = t
        print(f"{'closed loop (T=10 s)':<34}{name:<10}{t * 1e3:>10.2f} ms")

    for kernel, times in rows.items():
        if len(times) == 2:
            print(f"speedup {kernel}: {times['python'] / times['compiled']:.0f}x")


if __name__ == "__main__":
    main()
