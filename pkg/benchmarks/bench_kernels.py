"""Compare the numba kernels against their numpy/Python fallbacks.

Usage: python benchmarks/bench_kernels.py [--repeat 5]

The JIT switch is read at import time, so each setting runs in its own
subprocess with ELASTICPIPE_JIT set.  The first call (compilation for numba)
is timed separately from the steady-state median.
"""

import argparse
import json
import os
import random
import statistics
import subprocess
import sys
import time
from pathlib import Path

ROOT = Path(__file__).resolve().parents[1]


def _cases():
    import numpy as np

    from elasticpipe.config import load_config
    from elasticpipe.milp import MilpInstance, brute_force, solve
    from elasticpipe.planner import plan
    from elasticpipe.schedule import simulate
    from elasticpipe.sequence_processor import process
    from elasticpipe.workload import generate

    cfg = load_config(ROOT / "configs" / "desk_dp8.json")
    cl, md, pr = cfg.cluster, cfg.model, cfg.params
    lengths = generate("github_like", 512, 0).lengths
    units = plan(lengths, cfg, n_slices=4).units

    rng = random.Random(1)
    instances = []
    for _ in range(40):
        n = 8
        cons = tuple(({j: rng.uniform(-5, 5) for j in range(n)}, rng.uniform(-4, 8)) for _ in range(6))
        instances.append(MilpInstance(n, (3,) * n, cons, tuple(rng.uniform(-1, 1) for _ in range(n))))

    def sim():
        for u in units:
            simulate(u.unit, u.ckpt_map(cl.pp_degree), pr, cl, md)

    def brute():
        for inst in instances:
            try:
                brute_force(inst)
            except Exception:
                pass

    def milp():
        for inst in instances:
            try:
                solve(inst)
            except Exception:
                pass

    return {"simulate (schedule kernel)": sim, "brute force": brute, "solve (dual simplex)": milp,
            "process N=8": lambda: process(lengths, 8, pr, cl, md)}


def worker(repeat):
    out = {}
    for name, fn in _cases().items():
        t = time.perf_counter()
        fn()
        first = time.perf_counter() - t
        runs = []
        for _ in range(repeat):
            t = time.perf_counter()
            fn()
            runs.append(time.perf_counter() - t)
        out[name] = (first, statistics.median(runs))
    print(json.dumps(out))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--worker", action="store_true", help=argparse.SUPPRESS)
    args = ap.parse_args()
    if args.worker:
        worker(args.repeat)
        return
    results = {}
    for flag in ("1", "0"):
        env = dict(os.environ, ELASTICPIPE_JIT=flag)
        res = subprocess.run([sys.executable, __file__, "--worker", "--repeat", str(args.repeat)],
                             env=env, capture_output=True, text=True, check=True)
        results[flag] = json.loads(res.stdout.strip().splitlines()[-1])
    print(f"{'case':<28}{'jit first':>11}{'jit median':>12}{'numpy median':>14}{'speedup':>9}")
    for name in results["1"]:
        first, jit = results["1"][name]
        _, ref = results["0"][name]
        print(f"{name:<28}{first:>10.3f}s{jit:>11.4f}s{ref:>13.4f}s{ref / jit:>8.1f}x")


if __name__ == "__main__":
    main()
