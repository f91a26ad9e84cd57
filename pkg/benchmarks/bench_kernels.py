"""Compare the compiled and pure-Python kernel backends.

Usage: ``python benchmarks/bench_kernels.py [--repeat N]``

For every kernel the script checks that both backends agree and reports the
best-of-N wall time of each with the speedup.
"""
import argparse
import timeit

import numpy as np

from ddyk import kernels
from ddyk.envs import StateSpaceModel, TankParams, TankState


def _cases():
    rng = np.random.default_rng(0)
    plant = StateSpaceModel.random_stable(5, rng)
    u = rng.standard_normal(5000)
    L = 8
    g_u, g_y = rng.standard_normal(L) * 0.1, rng.standard_normal(L) * 0.1
    uw, yw = rng.standard_normal(L), rng.standard_normal(L)
    p = TankParams()
    x0 = TankState.steady(p, 0.5).as_array()

    def tank():
        x = x0.copy()
        for _ in range(200):
            kernels.tank_rk4(x, 60.0, p.tau_p, p.tau_in, p.tau_out, p.tau_m, p.area_tank,
                             p.k_out, p.f_max, p.dt, p.substeps)
        return x

    return {
        "lti_sim (n=5, 5000 steps)": lambda: kernels.lti_sim(plant.A, plant.B[:, 0].copy(),
                                                             plant.C[0].copy(), 0.0, u),
        "ddsim (L=8, 5000 steps)": lambda: kernels.ddsim(g_u, g_y, uw, yw, u),
        "tank_rk4 (200 samples x 5 substeps)": tank,
    }


def run(repeat=5):
    backends = kernels.available_backends()
    rows = []
    for name in _cases():
        times, outs = {}, {}
        for b in backends:
            kernels.use_backend(b)
            fn = _cases()[name]
            outs[b] = np.asarray(fn())
            times[b] = min(timeit.repeat(fn, number=1, repeat=repeat))
        if len(backends) > 1:
            diff = float(np.max(np.abs(outs["cython"] - outs["python"])))
        else:
            diff = 0.0
        rows.append((name, times, diff))
    kernels.use_backend(backends[-1])
    return backends, rows


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    backends, rows = run(args.repeat)
    print(f"backends: {', '.join(backends)}")
    print(f"{'kernel':40s} {'python ms':>10s} {'cython ms':>10s} {'speedup':>8s} {'max diff':>9s}")
    for name, t, diff in rows:
        py = t["python"] * 1e3
        cy = t.get("cython", float("nan")) * 1e3
        print(f"{name:40s} {py:10.3f} {cy:10.3f} {py / cy:8.1f} {diff:9.1e}")


if __name__ == "__main__":
    main()
