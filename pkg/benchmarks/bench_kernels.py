"""Time the numpy reference kernels against the compiled extension.

    python3 benchmarks/bench_kernels.py [--repeat 3] [--n 200000]

Each workload runs through the public API under both backends; outputs are
compared for equality before timings are reported.
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from ppscert import kernels
from ppscert.gaps import gap_exact_enum
from ppscert.region import verify_region_interval
from ppscert.testbeds import CarFollowingBed, GridWorldBed


def workloads(n: int):
    car = CarFollowingBed()
    x_car = car.distribution().sample(np.random.default_rng(1), n)
    grid = GridWorldBed(size=9, hazard_cells=frozenset({(4, 4)}), horizon=8)
    grid_law = grid.distribution()
    big = GridWorldBed(size=7, hazard_cells=frozenset({(3, 3)}), horizon=6)
    a, b = big.distribution(), big.distribution(slip=0.12)

    return {
        "car-following rollout": lambda: car.gap_metric(x_car),
        "car-following interval region": lambda: np.asarray(
            verify_region_interval(car, onset_bins=40, mag_bins=40).lattice_safe),
        "grid rollout": lambda: grid_law.sample(np.random.default_rng(2), n),
        "grid path enumeration": lambda: np.array([gap_exact_enum(big, a, b, f=big.outcome()).value]),
    }


def best_of(fn, repeat: int) -> tuple[float, object]:
    best, out = float("inf"), None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--n", type=int, default=200_000)
    args = ap.parse_args()
    backends = kernels.available_backends()
    print(f"backends: {', '.join(backends)}")
    print(f"{'workload':32s} {'python s':>10s} {'compiled s':>11s} {'speedup':>8s}  match")
    for name, fn in workloads(args.n).items():
        times, outs = {}, {}
        for be in backends:
            with kernels.use_backend(be):
                times[be], outs[be] = best_of(fn, args.repeat)
        if "compiled" in times:
            same = np.allclose(np.asarray(outs["python"], float), np.asarray(outs["compiled"], float),
                               rtol=1e-12, atol=1e-15)
            print(f"{name:32s} {times['python']:10.4f} {times['compiled']:11.4f} "
                  f"{times['python'] / times['compiled']:7.1f}x  {'yes' if same else 'NO'}")
        else:
            print(f"{name:32s} {times['python']:10.4f} {'n/a':>11s} {'':>8s}  -")


if __name__ == "__main__":
    main()
