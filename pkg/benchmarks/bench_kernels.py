#!/usr/bin/env python3
"""Benchmark the compiled kernel against the pure-Python fallback.

Runs the same actuated rollout on both backends and reports steps/second.
The compiled backend carries identification-scale workloads; the fallback
exists for environments without a compiler.

Usage: python benchmarks/bench_kernels.py [--segments N] [--steps N]
"""

import argparse
import time

import numpy as np

from spiralarm.arm import ArmGeometry, ArmParameters, build_arm
from spiralarm.kernels import SimKernel, available_backends


def bench(model, backend, steps, actuated=True):
    kern = SimKernel(model, backend=backend)
    n = model.n_segments
    th = np.zeros(2 * n)
    thd = np.zeros(2 * n)
    la = np.full(3, model.tendon_slack_length)
    if actuated:
        eng = np.array([0, 1, 1], dtype=np.uint8)
        cmd = np.array([model.tendon_slack_length,
                        model.tendon_slack_length - 0.05,
                        model.tendon_slack_length - 0.05])
    else:
        eng = np.zeros(3, dtype=np.uint8)
        cmd = np.full(3, model.tendon_slack_length)
    g = 9.81 * np.array([0.5, 0.0, 0.866])
    empty = (np.empty(0), np.empty((0, n, 3)), np.empty((0, n, 4)))
    # warmup
    kern.run(th.copy(), thd.copy(), la.copy(), eng, cmd, g, 1e-3, 50, 8,
             1e-3, 0, *empty, 0.0, False)
    t0 = time.perf_counter()
    kern.run(th, thd, la, eng, cmd, g, 1e-3, steps, 8, 1e-3, 0, *empty,
             0.0, False)
    return time.perf_counter() - t0


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--segments", type=int, default=8)
    ap.add_argument("--steps", type=int, default=4000)
    args = ap.parse_args()

    model = build_arm(ArmGeometry(n_segments=args.segments), ArmParameters())
    backends = available_backends()
    results = {}
    for scenario, actuated in (("passive", False), ("actuated", True)):
        print(f"\n{scenario} rollout, {args.segments} segments, "
              f"{args.steps} steps:")
        for name in sorted(backends):
            dt = bench(model, name, args.steps, actuated)
            rate = args.steps / dt
            results[(scenario, name)] = rate
            print(f"  {name:9s} {dt * 1e6 / args.steps:8.1f} us/step "
                  f"({rate:,.0f} steps/s)")
        if len(backends) == 2:
            ratio = (results[(scenario, "compiled")] /
                     results[(scenario, "python")])
            print(f"  speedup   {ratio:8.1f}x")


if __name__ == "__main__":
    main()
