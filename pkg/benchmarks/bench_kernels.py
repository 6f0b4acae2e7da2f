"""Compare the numba kernels with the pure-numpy fallback.

    python3 benchmarks/bench_kernels.py [--sizes 1000,10000,100000] [--repeat 5]

Kernel timings run both tables in one process.  The end-to-end timing runs
an additive fit in two subprocesses, one with ``DPAM_DISABLE_NUMBA=1``.
"""

import argparse
import os
import subprocess
import sys
import time

import numpy as np

from dpam import _kernels


def best_of(fn, repeat):
    out = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        out = min(out, time.perf_counter() - t0)
    return out


def kernel_table(sizes, repeat):
    nb = _kernels.numba_kernels()
    npk = _kernels.numpy_kernels()
    rng = np.random.default_rng(0)
    rows = []
    for K in sizes:
        y = np.cumsum(rng.standard_normal(K))
        w = rng.integers(1, 4, K).astype(float)
        t = np.sort(rng.random(K))
        B = nb["divdiff_band"](t, 3)
        d = 1.0 / w
        ab = nb["gram_band"](B, d)
        idx = np.sort(rng.choice(K - 3, size=(K - 3) // 2, replace=False)).astype(np.int64)
        cases = {
            "tv1_dp": lambda k: k["tv1_dp"](y, w, 5.0),
            "divdiff_band": lambda k: k["divdiff_band"](t, 3),
            "gram_band": lambda k: k["gram_band"](B, d),
            "subband": lambda k: k["subband"](ab, idx),
        }
        for name, call in cases.items():
            # agreement check before timing
            a, b = call(nb), call(npk)
            err = float(np.max(np.abs(a - b)) / max(1.0, np.max(np.abs(b))))
            if name == "tv1_dp" and K > 20000:
                t_np = np.nan  # the interpreted DP loop is too slow to be worth timing
            else:
                t_np = best_of(lambda: call(npk), repeat)
            t_nb = best_of(lambda: call(nb), repeat)
            rows.append((name, K, t_nb, t_np, err))
    return rows


FIT_SNIPPET = """
import time
from dpam.simlab import sparse_steps, generate
from dpam.tuning import build_plan
from dpam.solver import fit_additive, FitOptions
data, _ = generate(sparse_steps({n}, 10, seed=1))
plan = build_plan(data, "bv1", C1=1.0)
fit_additive(data, plan, FitOptions(max_sweeps=2))
t0 = time.perf_counter()
fit = fit_additive(data, plan, FitOptions())
print(time.perf_counter() - t0, fit.sweeps)
"""


def fit_timing(n):
    out = {}
    for label, flag in (("numba", "0"), ("numpy", "1")):
        env = dict(os.environ, DPAM_DISABLE_NUMBA=flag)
        res = subprocess.run([sys.executable, "-c", FIT_SNIPPET.format(n=n)], env=env,
                             capture_output=True, text=True, check=True)
        secs, sweeps = res.stdout.split()
        out[label] = (float(secs), int(sweeps))
    return out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", default="1000,10000,100000")
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--fit-n", type=int, default=2000)
    args = ap.parse_args(argv)
    sizes = [int(s) for s in args.sizes.split(",")]
    print(f"{'kernel':<14}{'K':>9}{'numba s':>12}{'numpy s':>12}{'speedup':>10}{'rel diff':>11}")
    for name, K, t_nb, t_np, err in kernel_table(sizes, args.repeat):
        sp = t_np / t_nb if np.isfinite(t_np) else np.nan
        print(f"{name:<14}{K:>9}{t_nb:>12.2e}{t_np:>12.2e}{sp:>10.1f}{err:>11.1e}")
    ft = fit_timing(args.fit_n)
    print()
    print(f"additive fit, n={args.fit_n}, p=10, bv1:")
    for label, (secs, sweeps) in ft.items():
        print(f"  {label:<6} {secs:8.3f} s  ({sweeps} sweeps)")


if __name__ == "__main__":
    main()
