"""Numba vs numpy timing of the hot kernels.

Part 1 times the max-min allocator in-process: jitted loop, the same loop
interpreted, and the vectorized numpy fallback. Part 2 times a whole
simulation in fresh interpreters with FABRICSIM_NUMBA=1 and =0, which also
covers the transfer DAG loop.

    python benchmarks/bench_kernels.py [--nodes 32] [--iterations 10]
"""

import argparse
import json
import os
import subprocess
import sys
import time

import numpy as np

from fabricsim import _kernels
from fabricsim._accel import USE_NUMBA


def random_instance(rng, nflow, nres, width=4):
    res = np.zeros((nflow, width), np.int64)
    lens = rng.integers(1, width + 1, nflow)
    for f in range(nflow):
        res[f, :lens[f]] = rng.choice(nres, lens[f], replace=False)
    cap = rng.uniform(1.0, 10.0, nres)
    demand = np.where(rng.random(nflow) < 0.2, rng.uniform(0.1, 2.0, nflow), np.inf)
    active = rng.random(nflow) < 0.9
    return active, res, lens.astype(np.int64), demand, cap


def time_calls(fn, instances, repeat=3):
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        for inst in instances:
            fn(*inst, np.empty(inst[0].shape[0]))
        best = min(best, time.perf_counter() - t0)
    return best / len(instances)


def bench_allocator(sizes=((16, 32), (128, 256), (512, 1024)), n=20, seed=0):
    rng = np.random.default_rng(seed)
    loop_py = getattr(_kernels.maxmin_loop, "py_func", _kernels.maxmin_loop)
    rows = []
    for nflow, nres in sizes:
        insts = [random_instance(rng, nflow, nres) for _ in range(n)]
        row = {"flows": nflow, "resources": nres,
               "numpy_s": time_calls(_kernels.maxmin_numpy, insts)}
        if USE_NUMBA:
            _kernels.maxmin_loop(*insts[0], np.empty(nflow))  # compile outside the timing
            row["numba_s"] = time_calls(_kernels.maxmin_loop, insts)
        if nflow <= 128:
            row["python_loop_s"] = time_calls(loop_py, insts, repeat=1)
        rows.append(row)
    return rows


SIM = """
import json, time
from fabricsim.config import load_scenario
from fabricsim.engine import run_simulation
from fabricsim._accel import USE_NUMBA
cfg = load_scenario({{"topology": {{"nodes": {nodes}, "nodes_per_leaf": 8}},
                     "workload": {{"jitter": "LogNormal", "jitter_sigma": 0.05}},
                     "background": {{"leaf_load": 0.3, "on_ms": 5, "off_ms": 5}},
                     "collective": {{"message_bytes": 5e7}},
                     "iterations": {iterations}, "warmup": 0, "seed": 1}})
run_simulation(cfg.with_overrides(iterations=1))  # warm the jit cache
t0 = time.perf_counter()
run = run_simulation(cfg)
print(json.dumps({{"numba": USE_NUMBA, "seconds": time.perf_counter() - t0,
                  "mean_iter_s": float(run.iteration_times.mean())}}))
"""


def bench_simulation(nodes, iterations):
    out = {}
    for flag in ("1", "0"):
        env = dict(os.environ, FABRICSIM_NUMBA=flag)
        proc = subprocess.run([sys.executable, "-c", SIM.format(nodes=nodes, iterations=iterations)],
                              env=env, capture_output=True, text=True, check=True)
        out["numba" if flag == "1" else "numpy"] = json.loads(proc.stdout)
    return out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--nodes", type=int, default=32)
    ap.add_argument("--iterations", type=int, default=10)
    args = ap.parse_args(argv)

    print("max-min allocator, seconds per call")
    for r in bench_allocator():
        parts = [f"{k}={v:.2e}" for k, v in r.items() if k.endswith("_s")]
        print(f"  {r['flows']:4d} flows x {r['resources']:4d} resources: " + "  ".join(parts))

    sim = bench_simulation(args.nodes, args.iterations)
    fast, slow = sim["numba"], sim["numpy"]
    print(f"simulation, {args.nodes} nodes x {args.iterations} iterations")
    print(f"  FABRICSIM_NUMBA=1: {fast['seconds']:.3f}s   FABRICSIM_NUMBA=0: {slow['seconds']:.3f}s   "
          f"speedup x{slow['seconds'] / fast['seconds']:.1f}")
    rel = abs(fast["mean_iter_s"] - slow["mean_iter_s"]) / slow["mean_iter_s"]
    print(f"  mean iteration time agrees to {rel:.1e} relative")


if __name__ == "__main__":
    main()
