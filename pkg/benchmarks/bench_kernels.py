"""Compare the numba and pure-numpy kernel backends.

Each backend runs in its own interpreter because the backend is fixed at
import time.  The script reports wall time per workload and checks that both
backends return identical numbers.

    python benchmarks/bench_kernels.py [--repeat 3]
"""
import argparse
import json
import os
import subprocess
import sys

WORKLOAD = r"""
import json, time
import numpy as np
from spikefisher import _kernels
from spikefisher.spectral_core import DiscreteMeasure, MPLaw, solve_m2, solve_m3, solve_silverstein
from spikefisher.spike_estimators import local_stieltjes

rng = np.random.default_rng(0)
H = DiscreteMeasure.empirical(np.r_[rng.uniform(0.5, 2.0, 300), 7.5, 10.0])
mp = MPLaw(DiscreteMeasure.from_atoms(rng.uniform(0.5, 5.0, 100)), 0.2)
eigs = np.sort(rng.uniform(0.0, 3.0, 4000))[::-1]
zs = np.r_[np.linspace(-5.0, -0.5, 20), np.linspace(45.0, 90.0, 20)]

def m2():
    return [solve_m2(H, 0.1, z).value for z in zs]

def m3():
    return [solve_m3(H, 0.1, 0.2, z).value for z in zs]

def silverstein():
    return [solve_silverstein(mp.population, 0.2, z).value for z in zs]

def m3_mp():
    return [solve_m3(mp, 0.5, 0.25, z).value for z in zs]

def local():
    return [local_stieltjes(eigs, k, 0.2, 8000)[0] for k in range(0, 400, 4)]

out = {"backend": _kernels.BACKEND, "timings": {}, "values": {}}
for name, fn in [("m2", m2), ("m3", m3), ("silverstein", silverstein), ("m3_mp", m3_mp), ("local", local)]:
    fn()  # warm-up, includes jit compilation or cache load
    best = float("inf")
    for _ in range(REPEAT):
        t0 = time.perf_counter()
        vals = fn()
        best = min(best, time.perf_counter() - t0)
    out["timings"][name] = best
    out["values"][name] = [float(v) for v in vals]
print(json.dumps(out))
"""


def run_backend(backend: str, repeat: int) -> dict:
    env = dict(os.environ, SPIKEFISHER_BACKEND=backend)
    code = f"REPEAT = {repeat}\n" + WORKLOAD
    res = subprocess.run(
        [sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True
    )
    return json.loads(res.stdout)


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    fast = run_backend("numba", args.repeat)
    slow = run_backend("numpy", args.repeat)
    print(f"{'workload':<12}{'numba [s]':>12}{'numpy [s]':>12}{'speedup':>10}{'max |diff|':>14}")
    for name in fast["timings"]:
        a, b = fast["timings"][name], slow["timings"][name]
        diff = max(abs(x - y) for x, y in zip(fast["values"][name], slow["values"][name]))
        print(f"{name:<12}{a:>12.4f}{b:>12.4f}{b / a:>10.1f}{diff:>14.2e}")


if __name__ == "__main__":
    main()
