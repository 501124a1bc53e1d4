"""Time the compiled kernels against their numpy fallbacks.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--segments 400]

Each row also checks that both backends agree on the benchmark input.
"""
import argparse
import math
import timeit

import numpy as np

from reachnav import _kernels_py as pure

try:
    from reachnav import _kernels as compiled
except ImportError:
    compiled = None


def polygon_segments(n, rng):
    ang = np.sort(rng.uniform(0, 2 * math.pi, n))
    r = rng.uniform(2.0, 4.0, n)
    pts = np.c_[r * np.cos(ang), r * np.sin(ang)]
    return np.ascontiguousarray(np.c_[pts, np.roll(pts, -1, axis=0)])


def cases(n_seg, rng):
    seg = polygon_segments(n_seg, rng)
    thetas = np.ascontiguousarray(np.linspace(-math.pi, math.pi, 720, endpoint=False))
    feat = np.ascontiguousarray((rng.random((256, 256)) < 0.01).astype(np.uint8))
    return {
        "nearest_segment": lambda k: k.nearest_segment(0.3, -0.2, seg),
        "point_in_rings": lambda k: k.point_in_rings(0.3, -0.2, seg),
        "ray_cast (720 rays)": lambda k: k.ray_cast(0.3, -0.2, thetas, seg, 6.0),
        "segment_min_distance": lambda k: k.segment_min_distance(0.0, 0.0, 1.0, 0.5, seg),
        "edt_sq (256x256)": lambda k: k.edt_sq(feat),
    }


def same(a, b):
    if isinstance(a, tuple):
        return all(same(x, y) for x, y in zip(a, b))
    return np.allclose(a, b, rtol=0, atol=1e-12)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--segments", type=int, default=400)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    if compiled is None:
        print("compiled extension not built; only the numpy backend is available")
    print(f"{'kernel':<24}{'numpy [us]':>12}{'compiled [us]':>15}{'speedup':>9}  agree")
    for name, fn in cases(args.segments, np.random.default_rng(args.seed)).items():
        n = 200 if "edt" not in name else 5
        t_py = min(timeit.repeat(lambda: fn(pure), number=n, repeat=args.repeat)) / n * 1e6
        if compiled is None:
            print(f"{name:<24}{t_py:>12.1f}{'-':>15}{'-':>9}  -")
            continue
        t_c = min(timeit.repeat(lambda: fn(compiled), number=n, repeat=args.repeat)) / n * 1e6
        ok = same(fn(pure), fn(compiled))
        print(f"{name:<24}{t_py:>12.1f}{t_c:>15.1f}{t_py / t_c:>8.1f}x  {ok}")


if __name__ == "__main__":
    main()
