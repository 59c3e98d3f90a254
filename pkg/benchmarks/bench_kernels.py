"""Compare the numba and numpy kernels.

    python3 benchmarks/bench_kernels.py [--paths N] [--repeat R]

Both backends are called directly, so one process times both. The first
numba call (compilation) is excluded.
"""

import argparse
import time

import numpy as np

from pulsedom import kernels
from pulsedom._accel import HAVE_NUMBA
from pulsedom.dynamics import OscillatorParams, segment_stats


def best_of(fn, repeat):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bench_langevin(n_paths, repeat):
    keys = kernels.path_keys(1, 2, np.arange(n_paths, dtype=np.uint64))
    args = (keys, 0, 200, 1e-3, 1.0, 1e-3, 1.0, True)

    def run(f):
        x, p = np.zeros(n_paths), np.zeros(n_paths)
        f(x, p, *args)
        return x

    out = {"numpy": best_of(lambda: run(kernels.langevin_np), repeat)}
    if HAVE_NUMBA:
        run(kernels._langevin_nb)
        out["numba"] = best_of(lambda: run(kernels._langevin_nb), repeat)
        x_np, x_nb = run(kernels.langevin_np), run(kernels._langevin_nb)
        out["max_abs_diff"] = float(np.max(np.abs(x_np - x_nb)))
    return out


def bench_condvar(n, repeat):
    osc = OscillatorParams(1.0, 1e-5, 1e7)
    seg = segment_stats(osc, 0.1)
    rng = np.random.default_rng(0)
    l1, l2 = rng.normal(size=n), rng.normal(size=n)
    mm = np.ascontiguousarray(np.broadcast_to(seg.mean_map, (n, 2, 2)))
    nm = np.ascontiguousarray(np.broadcast_to(seg.added_noise, (n, 2, 2)))
    init = osc.bath_variance * np.eye(2)
    tvec = np.array([0.0, 1.0])
    args = (l1, l2, 1.0, 1.0, mm, nm, init, tvec, True)
    out = {"numpy": best_of(lambda: kernels.two_pulse_condvar_np(*args), repeat)}
    if HAVE_NUMBA:
        kernels._two_pulse_condvar_nb(*args)
        out["numba"] = best_of(lambda: kernels._two_pulse_condvar_nb(*args), repeat)
        out["max_rel_diff"] = float(np.max(np.abs(kernels.two_pulse_condvar_np(*args) /
                                                  kernels._two_pulse_condvar_nb(*args) - 1)))
    return out


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--paths", type=int, default=100_000)
    ap.add_argument("--batch", type=int, default=20_000)
    ap.add_argument("--repeat", type=int, default=3)
    a = ap.parse_args()
    for name, res in (("langevin (200 Heun steps)", bench_langevin(a.paths, a.repeat)),
                      ("two-pulse objective", bench_condvar(a.batch, a.repeat))):
        line = f"{name:28s} numpy {res['numpy'] * 1e3:9.2f} ms"
        if "numba" in res:
            line += f"   numba {res['numba'] * 1e3:9.2f} ms   speedup {res['numpy'] / res['numba']:6.1f}x"
            line += "   diff " + ", ".join(f"{k}={v:.2e}" for k, v in res.items() if "diff" in k)
        print(line)


if __name__ == "__main__":
    main()
