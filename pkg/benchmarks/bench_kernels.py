"""Time the flow kernels of each available backend on the same state.

Usage::

    python benchmarks/bench_kernels.py [--m 4801] [--steps 500] [--repeat 3]

Reports the best wall time per backend for ``krf_advance`` (the fused step
loop) and ``monitors``, plus the max difference of the advanced states.
"""
import argparse
import time

import numpy as np

from kahlerlab._kernels import backends
from kahlerlab.flow import FlowState
from kahlerlab.metric import model_and_metric


def best_time(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--m", type=int, default=4801, help="grid points")
    ap.add_argument("--L", type=float, default=12.0, help="half-width of the y window")
    ap.add_argument("--steps", type=int, default=500, help="flow steps per timing")
    ap.add_argument("--dt", type=float, default=1e-3)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)

    u = model_and_metric("CP1", "poly", [0.1, 0.0, -0.1])
    s = FlowState.from_potential(u, args.L, args.m)
    r, qr = s.r, s.qr
    impls = backends()
    print(f"m = {args.m}, L = {args.L}, steps = {args.steps}, dt = {args.dt}")
    print(f"{'backend':<10}{'advance [s]':>14}{'per step [ms]':>16}{'monitors [ms]':>16}")
    results = {}
    for name, mod in impls.items():
        t_adv, out = best_time(lambda: mod.krf_advance(s.w, r, qr, s.pins[0], s.pins[1], s.dy,
                                                       args.dt, args.steps, s.C1),
                               args.repeat)
        t_mon, _ = best_time(lambda: mod.monitors(s.w, r, qr, s.dy, s.C1), 10 * args.repeat)
        results[name] = (t_adv, out)
        print(f"{name:<10}{t_adv:>14.3f}{1e3 * t_adv / args.steps:>16.3f}{1e3 * t_mon:>16.3f}")
    if len(results) == 2:
        (tp, op), (tc, oc) = results["python"], results["compiled"]
        diff = float(np.max(np.abs((op[0] + op[4]) - (oc[0] + oc[4]))))
        print(f"speedup {tp / tc:.2f}x, max |w_python - w_compiled| = {diff:.2e}")
    else:
        print("compiled extension not built; only the fallback was timed")


if __name__ == "__main__":
    main()
