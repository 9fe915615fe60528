"""Compare the compiled and numpy kernels on representative inputs.

    python benchmarks/bench_kernels.py [--repeat N]

Prints the best-of-N time per call for each backend and the speedup.
"""

import argparse
import timeit

import numpy as np

from galimo import kernels
from galimo.geometry import Pose, so3_exp


def cases(rng):
    roi = rng.normal(size=(40, 3))

    poses = [Pose.identity()]
    for _ in range(1099):
        poses.append(poses[-1] @ Pose(so3_exp(rng.normal(scale=0.01, size=3)), [0, 0, rng.uniform(0.8, 1.2)]))
    gt = np.array([p.matrix() for p in poses])
    est = gt.copy()
    est[:, :3, 3] *= 1.01
    dist = np.concatenate(([0.0], np.cumsum(np.linalg.norm(np.diff(gt[:, :3, 3], axis=0), axis=1))))
    lengths = np.arange(100.0, 900.0, 100.0)

    K = 10
    R = np.array([so3_exp(rng.normal(scale=0.1, size=3)) for _ in range(K)])
    t = rng.normal(size=(K, 3))
    pts = np.column_stack((rng.uniform(-10, 10, 1000), rng.uniform(-2, 2, 1000), rng.uniform(8, 60, 1000)))
    pi = rng.integers(0, K, 5000)
    li = rng.integers(0, 1000, 5000)

    return {
        "max_area_triangle (40 points)": ("max_area_triangle", (roi,)),
        "kitti_segment_errors (1100 poses, step 10)": ("kitti_segment_errors", (gt, est, dist, lengths, 10)),
        "reprojection_jacobians (5000 observations)": (
            "reprojection_jacobians",
            (R, t, pts, pi, li, 718.856, 718.856, 607.19, 185.22),
        ),
    }


def best_time(fn, args, repeat):
    number = 1
    while timeit.timeit(lambda: fn(*args), number=number) < 0.05:
        number *= 2
    return min(timeit.repeat(lambda: fn(*args), number=number, repeat=repeat)) / number


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    backends = {"python": kernels.python_backend}
    if kernels.compiled_backend is not None:
        backends["cython"] = kernels.compiled_backend
    else:
        print("compiled kernels not built; timing the numpy fallback only")
    rng = np.random.default_rng(0)
    print(f"{'kernel':46s}" + "".join(f"{b:>12s}" for b in backends) + f"{'speedup':>10s}")
    for label, (name, fargs) in cases(rng).items():
        times = {b: best_time(getattr(mod, name), fargs, args.repeat) for b, mod in backends.items()}
        row = f"{label:46s}" + "".join(f"{times[b] * 1e3:10.3f}ms" for b in backends)
        if "cython" in times:
            row += f"{times['python'] / times['cython']:9.1f}x"
        print(row)


if __name__ == "__main__":
    main()
