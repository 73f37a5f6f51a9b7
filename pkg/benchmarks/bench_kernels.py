"""Time the numba and numpy kernel backends on the same inputs.

    python benchmarks/bench_kernels.py [--repeat N] [--json OUT]

The backend is fixed at import time, so each one runs in its own
subprocess with ROUGHPME_NUMBA set accordingly.
"""
from __future__ import annotations

import argparse
import json
import os
import subprocess
import sys
import time

WORKER = r"""
import json, sys, time
import numpy as np
from roughpme import kernels
from roughpme.solver import SolverConfig, mollifier_rule, solve
from roughpme.coefficients import make_family
from roughpme.paths import brownian_path
from roughpme.torus import TorusGrid

repeat = int(sys.argv[1])
rng = np.random.default_rng(0)
offs, w, dw, mu2 = mollifier_rule(1e-3)
u = 1.0 + 0.5 * rng.standard_normal((1, 4096))
F = u ** 2
fL, fR = np.sin(u), np.cos(u)
al = np.ones_like(u)
f1 = (rng.uniform(size=1024) > 0.5).astype(float)
k1 = np.abs(np.arange(1024) - 0.0) ** -1.5
k1[0] = 0.0
f2 = (rng.uniform(size=(64, 64)) > 0.5).astype(float)
k2 = rng.uniform(size=(64, 127))


def best(fn):
    fn()  # warm-up and JIT
    ts = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        ts.append(time.perf_counter() - t)
    return min(ts)


out = {"backend": kernels.backend_name()}
out["phi_apply_4096"] = best(lambda: kernels.phi_apply(u, 8.0, 0.5, offs, w, dw, mu2))
out["rhs_1d_4096"] = best(lambda: kernels.rhs_1d(u, F, fL, fR, al, 1 / 4096))
out["pair_sum_1d_1024"] = best(lambda: kernels.pair_sum_1d(f1, k1, 1.0, True))
out["pair_sum_2d_64x64"] = best(lambda: kernels.pair_sum_2d(f2, k2, 1.0, True, False))
g = TorusGrid(1, 128)
cfg = SolverConfig(m=2.0, eta=0.01, grid=g, T=0.005, kappa=0.5)
path = brownian_path(1, 0.005, 17)
co = make_family("separable_sine")
u0 = g.sample(lambda x: 1 + 0.5 * np.sin(2 * np.pi * x))
out["solve_128"] = best(lambda: solve(u0, path, cfg, co))
print(json.dumps(out))
"""


def run_backend(flag: str, repeat: int) -> dict:
    env = dict(os.environ, ROUGHPME_NUMBA=flag)
    res = subprocess.run([sys.executable, "-c", WORKER, str(repeat)], env=env, capture_output=True, text=True,
                         check=True)
    return json.loads(res.stdout.strip().splitlines()[-1])


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--json", help="write results to this file")
    args = ap.parse_args(argv)
    t0 = time.perf_counter()
    nb = run_backend("1", args.repeat)
    npy = run_backend("0", args.repeat)
    keys = [k for k in nb if k != "backend"]
    print(f"{'kernel':<22}{nb['backend']:>12}{npy['backend']:>12}{'speedup':>10}")
    for k in keys:
        print(f"{k:<22}{nb[k] * 1e3:>10.3f}ms{npy[k] * 1e3:>10.3f}ms{npy[k] / nb[k]:>9.1f}x")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump({"numba": nb, "numpy": npy}, fh, indent=2)
    print(f"total {time.perf_counter() - t0:.1f} s")
    return 0


if __name__ == "__main__":
    sys.exit(main())
