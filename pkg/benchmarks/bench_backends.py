"""Compare the numba and numpy backends on the GELU kernel and on per-step sampling latency.

    python benchmarks/bench_backends.py [--trials 300] [--json out.json]
"""

import argparse
import json
import time

import numpy as np

from gaitdiff import _accel, kernels
from gaitdiff.bench import latency_vs_steps, single_thread
from gaitdiff.policy import DiffusionPolicy, PolicyConfig


def time_gelu(fn, n, reps):
    x = np.random.default_rng(0).standard_normal(n)
    fn(x)
    t0 = time.perf_counter()
    for _ in range(reps):
        fn(x)
    return (time.perf_counter() - t0) / reps * 1e6


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--trials", type=int, default=300)
    ap.add_argument("--json", metavar="PATH")
    args = ap.parse_args()
    backends = ["numpy"] + (["numba"] if _accel.HAVE_NUMBA else [])
    pol = DiffusionPolicy.init(PolicyConfig(), np.random.default_rng(0))
    obs = np.random.default_rng(1).standard_normal(150)
    rows = []
    with single_thread():
        for name in backends:
            gelu = kernels.get_backend(name)[0]
            for n in (256, 256 * 4000):
                us = time_gelu(gelu, n, 2000 if n == 256 else 5)
                rows.append({"backend": name, "kernel": f"gelu[{n}]", "us": us})
            for dtype in (np.float64, np.float32):
                reps = latency_vs_steps(pol, None, obs, steps=(1, 60), trials=args.trials,
                                        warmup=20, backend=name, dtype=dtype)
                for T, rep in reps.items():
                    rows.append({"backend": name, "kernel": f"sample T={T} {np.dtype(dtype).name}",
                                 "p50_ms": rep.p50, "p99_ms": rep.p99})
    for r in rows:
        val = f"{r['us']:10.2f} us" if "us" in r else f"p50 {r['p50_ms']:7.3f} ms  p99 {r['p99_ms']:7.3f} ms"
        print(f"{r['backend']:6s} {r['kernel']:24s} {val}")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(rows, fh, indent=1)


if __name__ == "__main__":
    main()
