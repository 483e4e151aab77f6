"""Time the numba and pure-numpy kernel paths on the same workloads.

Each path runs in its own interpreter because ``SCANNORM_NUMBA`` is read at
import time.  Every stage is called once untimed so JIT compilation is not
counted.

    python benchmarks/bench_kernels.py [--repeat 3]
"""
import argparse
import json
import os
import subprocess
import sys
import time

STAGES = ("scan", "dbscan", "bpa", "poisson", "mesh_distance", "render_masks")


def _workloads():
    import numpy as np

    from scannorm.geometry import PointCloud, points_to_mesh_distance, sample_surface_uniform
    from scannorm.isolation import ObjectInstance, dbscan
    from scannorm.pipeline import KITTI_LIKE_CAMERA
    from scannorm.isolation import Calibration
    from scannorm.sampling import poisson_disk_sample
    from scannorm.scansim import Scene, make_pattern, render_masks, scan, sensor_pose
    from scannorm.surface import complete_surface

    scene = Scene()
    scene.add_car((10.0, 1.0), 0.4)
    scene.add_car((18.0, -4.0), -1.0)
    pattern, pose = make_pattern("kitti64"), sensor_pose(1.73)
    ls = scan(scene, pattern, pose)
    car = ls.object_points(1)
    mesh = complete_surface(ObjectInstance(PointCloud(car), "box", 10.0))
    probe = sample_surface_uniform(mesh, 20000, np.random.default_rng(0)) + 0.05
    cam = KITTI_LIKE_CAMERA
    calib = Calibration.forward_camera(cam["fx"], cam["fy"], cam["cx"], cam["cy"], cam["image_size"], cam["offset"])
    return {
        "scan": lambda: scan(scene, pattern, pose),
        "dbscan": lambda: dbscan(car, 0.2, 3),
        "bpa": lambda: complete_surface(ObjectInstance(PointCloud(car), "box", 10.0)),
        "poisson": lambda: poisson_disk_sample(mesh, 4000, seed=0),
        "mesh_distance": lambda: points_to_mesh_distance(probe, mesh),
        "render_masks": lambda: render_masks(scene, pattern, calib, pose),
    }


def run_child(repeat: int) -> dict:
    from scannorm import _accel

    work = _workloads()
    out = {"use_numba": _accel.USE_NUMBA}
    for name in STAGES:
        work[name]()
        best = float("inf")
        for _ in range(repeat):
            t0 = time.perf_counter()
            work[name]()
            best = min(best, time.perf_counter() - t0)
        out[name] = best
    return out


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--child", action="store_true", help=argparse.SUPPRESS)
    args = ap.parse_args()
    if args.child:
        print(json.dumps(run_child(args.repeat)))
        return
    results = {}
    for flag in ("1", "0"):
        env = {**os.environ, "SCANNORM_NUMBA": flag}
        proc = subprocess.run([sys.executable, __file__, "--child", "--repeat", str(args.repeat)],
                              env=env, capture_output=True, text=True, check=True)
        results[flag] = json.loads(proc.stdout.strip().splitlines()[-1])
    if not results["1"]["use_numba"]:
        print("numba is not importable; both runs used the numpy path")
    print(f"{'stage':<14}{'numba (s)':>12}{'numpy (s)':>12}{'speedup':>10}")
    for name in STAGES:
        a, b = results["1"][name], results["0"][name]
        print(f"{name:<14}{a:>12.4f}{b:>12.4f}{b / a:>9.1f}x")


if __name__ == "__main__":
    main()
