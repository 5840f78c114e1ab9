"""Compiled vs pure-Python simulator kernel on the same trace.

    python benchmarks/bench_kernel.py --queries 1000000
"""
import argparse
import time

import numpy as np

from finesched import simcore
from finesched.policy import parse_policy
from finesched.profile import default_catalog
from finesched.simcore import SimConfig, run
from finesched.tracegen import TraceSpec, generate


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--queries", type=int, default=1_000_000)
    ap.add_argument("--policy", default="slackfit")
    ap.add_argument("--cv2", type=float, default=8.0)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()

    rate = 7050.0
    spec = TraceSpec(
        kind="bursty", duration=args.queries / rate, seed=1, cv2=args.cv2,
        lambda_b=1500, lambda_v=rate - 1500,
    )
    t0 = time.perf_counter()
    trace = generate(spec)
    print(f"trace: {len(trace)} queries in {time.perf_counter() - t0:.2f}s")
    cfg = SimConfig(default_catalog(), parse_policy(args.policy), worker_count=8)

    backends = [b for b in ("cython", "python") if b in simcore._BACKENDS]
    results = {}
    for name in backends:
        best = float("inf")
        for _ in range(args.repeat):
            t0 = time.perf_counter()
            rep = run(trace, cfg, backend=name)
            best = min(best, time.perf_counter() - t0)
        results[name] = rep
        print(f"{name:>7}: {best:6.3f}s  {len(trace) / best / 1e6:6.2f} M queries/s  "
              f"attainment={rep.slo_attainment:.4f}")
        results[name + "_t"] = best
    if len(backends) == 2:
        a, b = results["cython"], results["python"]
        same = np.array_equal(a.status, b.status) and np.array_equal(a.completion_us, b.completion_us)
        print(f"speedup: {results['python_t'] / results['cython_t']:.1f}x  identical={same}")


if __name__ == "__main__":
    main()
