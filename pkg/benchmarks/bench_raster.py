"""Time the numba and numpy rasterizer kernels on the same cloud.

    python benchmarks/bench_raster.py [--gaussians N] [--size PX] [--repeats R]

Reports the best-of-R wall time for a forward render and a forward+backward
step on each backend, the speedup, and the largest image and gradient
disagreement between the two.
"""

import argparse
import time

import numpy as np

from splatprint.geometry import CameraIntrinsics, Sim3Transform, quat_normalize, rot_y
from splatprint.gsplat._accel import BACKENDS
from splatprint.gsplat.cloud import GaussianCloud
from splatprint.gsplat.render import Camera, backward, render


def finger_cloud(n, rng):
    """Small gaussians scattered over a capped cylinder, like a fused finger cloud."""
    theta = rng.uniform(0, 2 * np.pi, n)
    y = rng.uniform(-15, 15, n)
    r = 8.0 + rng.normal(0, 0.05, n)
    means = np.stack([r * np.sin(theta), y, r * np.cos(theta)], axis=1)
    log_scales = np.log(rng.uniform(0.08, 0.2, (n, 3)))
    quats = quat_normalize(rng.normal(size=(n, 4)))
    return GaussianCloud(means, log_scales, quats, np.full(n, 0.0), rng.normal(0, 1, (n, 3)))


def best_of(fn, repeats):
    times = []
    for _ in range(repeats):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--gaussians", type=int, default=16000)
    ap.add_argument("--size", type=int, default=128)
    ap.add_argument("--repeats", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    rng = np.random.default_rng(args.seed)
    cloud = finger_cloud(args.gaussians, rng)
    intr = CameraIntrinsics.centered(500.0 * args.size / 128, args.size, args.size)
    pose = Sim3Transform(1.0, rot_y(0.0), np.array([0.0, 3.0, -80.0]))
    cam = Camera(intr, pose)
    gt = rng.uniform(0, 1, (args.size, args.size, 3))

    results = {}
    for name in sorted(BACKENDS):
        render(cloud, cam, backend=name)  # warm-up (jit compile)
        backward(cloud, cam, gt, backend=name)
        fwd = best_of(lambda: render(cloud, cam, backend=name), args.repeats)
        step = best_of(lambda: backward(cloud, cam, gt, backend=name), args.repeats)
        results[name] = (fwd, step, render(cloud, cam, backend=name), backward(cloud, cam, gt, backend=name)[1])
        print(f"{name:6s} forward {fwd * 1e3:9.2f} ms   forward+backward {step * 1e3:9.2f} ms")

    if {"numba", "numpy"} <= set(results):
        nb, npy = results["numba"], results["numpy"]
        print(f"speedup forward {npy[0] / nb[0]:.1f}x   forward+backward {npy[1] / nb[1]:.1f}x")
        print(f"max image diff {np.max(np.abs(nb[2] - npy[2])):.3e}")
        print(f"max mean-gradient diff {np.max(np.abs(nb[3].means - npy[3].means)):.3e}")
    else:
        print("numba unavailable; only the numpy backend was timed")


if __name__ == "__main__":
    main()
