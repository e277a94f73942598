"""Numba kernels against their numpy twins on the reference building.

    python3 benchmarks/bench_kernels.py [--repeat N]

Checks both paths agree, then prints median wall time per call.
"""
import argparse
import math
import time

import numpy as np

from hashnav import _accel, kernels
from hashnav.world import reference_world


def median_time(fn, repeat, warmup=3):
    for _ in range(warmup):
        fn()
    ts = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        ts.append(time.perf_counter() - t0)
    return float(np.median(ts))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=50)
    args = ap.parse_args(argv)
    if not _accel.HAVE_NUMBA:
        print("numba unavailable: nothing to compare")
        return 0
    w = reference_world()
    walls = np.asarray(w.walls, dtype=np.float64)
    rng = np.random.default_rng(0)
    angles = np.linspace(-math.pi, math.pi, 360, endpoint=False)
    origin = (20.0, 12.0)
    ranges = kernels.raycast(origin, angles, walls, 10.0, backend="numpy")
    ok = np.isfinite(ranges)
    pts = np.column_stack([origin[0] + ranges[ok] * np.cos(angles[ok]),
                           origin[1] + ranges[ok] * np.sin(angles[ok])])
    pts += rng.normal(0, 0.01, pts.shape)
    probes = rng.uniform(0, 40, (200, 2))

    cases = {
        "raycast 360 beams": lambda b: kernels.raycast(origin, angles, walls, 10.0, backend=b),
        "split polyline": lambda b: kernels.split_polyline(pts, 0.05, 4, backend=b),
        "clearance x200": lambda b: [kernels.clearance(p, walls, backend=b) for p in probes],
    }
    print(f"{'kernel':<20}{'numpy ms':>10}{'numba ms':>10}{'speedup':>9}")
    for name, fn in cases.items():
        a, b = fn("numpy"), fn("numba")
        if isinstance(a, np.ndarray):
            assert np.array_equal(a, b), name
        else:
            assert np.allclose(a, b), name
        tn = median_time(lambda: fn("numpy"), args.repeat)
        tj = median_time(lambda: fn("numba"), args.repeat)
        print(f"{name:<20}{tn * 1e3:>10.3f}{tj * 1e3:>10.3f}{tn / tj:>8.1f}x")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
