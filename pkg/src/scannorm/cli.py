"""Command line entry point: ``scannorm <command> ...``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import io as sio
from .errors import ScanNormError
from .geometry import PointCloud
from .isolation import ObjectInstance, isolate_frame, object_distance
from .pipeline import FrameInputs, PipelineConfig, eval_normalization, load_frame_inputs, run_dataset, simulate_dataset
from .sampling import sample_semi_canonical
from .surface import complete_surface

log = logging.getLogger("scannorm")

EXIT_OK, EXIT_ERROR, EXIT_PARTIAL = 0, 1, 2


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("pipeline parameters (override --config)")
    g.add_argument("--config", type=Path, help="TOML file with the same keys as these flags")
    g.add_argument("--sensor", choices=["kitti", "nuscenes"])
    g.add_argument("--d-ideal", type=float)
    g.add_argument("--alpha", type=float, help="DBSCAN radius multiplier")
    g.add_argument("--min-points", type=int)
    g.add_argument("--bpa-max-radius", type=float)
    g.add_argument("--bpa-radius-count", type=int)
    g.add_argument("--mask-shrink", type=float)
    g.add_argument("--sa-density", type=float)
    g.add_argument("--strategy", choices=["vres", "surface-area", "virtual-lidar"])
    g.add_argument("--vl-pattern")
    g.add_argument("--sc-method", choices=["bpa", "alpha"])
    g.add_argument("--z-offset", type=float)
    g.add_argument("--mode", choices=["source_boxes", "target_masks"])
    g.add_argument("--keep-original", action="store_true", default=None)
    g.add_argument("--seed", type=int)


_FLAG_KEYS = ("sensor", "d_ideal", "alpha", "min_points", "bpa_max_radius", "bpa_radius_count", "mask_shrink",
              "sa_density", "strategy", "vl_pattern", "sc_method", "z_offset", "mode", "keep_original")


def _config(args) -> tuple[PipelineConfig, int]:
    overrides = {k: getattr(args, k) for k in _FLAG_KEYS if getattr(args, k, None) is not None}
    seed = 0
    if args.config is not None:
        try:
            import tomllib
        except ModuleNotFoundError:
            import tomli as tomllib
        with open(args.config, "rb") as f:
            seed = int(tomllib.load(f).get("seed", 0))
        cfg = PipelineConfig.from_toml(args.config, overrides)
    else:
        cfg = PipelineConfig.from_dict(overrides)
    if args.seed is not None:
        seed = args.seed
    return cfg, seed


def _origin(args, cfg: PipelineConfig):
    return tuple(args.sensor_origin) if args.sensor_origin is not None else cfg.origin


def cmd_run(args) -> int:
    cfg, seed = _config(args)
    summary = run_dataset(args.input, args.output, cfg, seed=seed, workers=args.workers,
                          out_format=args.out_format)
    log.info("%d/%d frames processed", summary["succeeded"], summary["frames"])
    for f in summary["failed"]:
        log.warning("frame %s failed: %s", f["frame_id"], f["error"])
    return EXIT_PARTIAL if summary["failed"] else EXIT_OK


def cmd_isolate(args) -> int:
    cfg, _ = _config(args)
    cloud = sio.read_cloud(args.cloud)
    in_dir = args.input_dir or Path(args.cloud).parent.parent
    inputs = load_frame_inputs(in_dir, cloud.frame_id, cfg)
    dz = cfg.z_offset
    if dz:
        from .pipeline import _shift_calib
        from .geometry import BoundingBox3

        cloud = cloud.translated((0.0, 0.0, dz))
        if inputs.boxes:
            inputs.boxes = [BoundingBox3((b.center[0], b.center[1], b.center[2] + dz), b.dims, b.yaw)
                            for b in inputs.boxes]
        if inputs.calib is not None:
            inputs.calib = _shift_calib(inputs.calib, dz)
    from dataclasses import replace

    sensor = replace(cfg.sensor, origin=cfg.origin)
    if cfg.mode == "source_boxes":
        res = isolate_frame(cloud, boxes=inputs.boxes, config=sensor, params=cfg.cluster,
                            min_points=cfg.min_points, box_labels=inputs.box_labels)
    else:
        res = isolate_frame(cloud, masks=inputs.masks, calib=inputs.calib, config=sensor, params=cfg.cluster,
                            min_points=cfg.min_points, mask_shrink=cfg.mask_shrink)
    out = Path(args.output)
    listing = []
    for k, inst in enumerate(res.instances):
        path = out / f"{cloud.frame_id}_{k}.ply"
        sio.write_cloud(path, inst.points)
        listing.append({"file": path.name, "points": len(inst.points), "d_o": inst.origin_distance,
                        "status": inst.status, "source": inst.source, "class": inst.class_label})
    sio.write_json(out / f"{cloud.frame_id}_instances.json",
                   {"instances": listing, "skipped": [vars(s) for s in res.skipped]})
    print(json.dumps({"instances": len(listing), "skipped": len(res.skipped)}))
    return EXIT_OK


def _instance(path, origin) -> ObjectInstance:
    cloud = sio.read_cloud(path)
    return ObjectInstance(cloud, "file", object_distance(cloud.points, origin), cloud.frame_id)


def cmd_complete(args) -> int:
    cfg, _ = _config(args)
    origin = _origin(args, cfg)
    inst = _instance(args.instance, origin)
    mesh = complete_surface(inst, cfg.sc_method, cfg.sc_params, cfg.min_points, origin)
    sio.write_mesh(args.output, mesh)
    print(json.dumps({"triangles": len(mesh), "area": mesh.area()}))
    return EXIT_OK


def cmd_sample(args) -> int:
    cfg, seed = _config(args)
    from dataclasses import replace

    origin = _origin(args, cfg)
    inst = _instance(args.instance, origin)
    mesh = sio.read_mesh(args.mesh)
    sensor = replace(cfg.sensor, origin=origin)
    out = sample_semi_canonical(mesh, inst, sensor, cfg.sampling, seed=seed)
    sio.write_cloud(args.output, out)
    print(json.dumps({"points": len(out)}))
    return EXIT_OK


def cmd_simulate(args) -> int:
    if args.scene is not None:
        from .pipeline import KITTI_LIKE_CAMERA
        from .scansim import annotation_box, make_pattern, render_masks, scan, scene_from_dict, sensor_pose
        from .isolation import Calibration

        desc = json.loads(Path(args.scene).read_text())
        scene = scene_from_dict(desc, Path(args.scene).parent)
        pattern = make_pattern(desc.get("pattern", args.preset))
        pose = sensor_pose(float(desc.get("sensor_height", pattern.mount_height)))
        cam = {**KITTI_LIKE_CAMERA, **desc.get("camera", {})}
        calib = Calibration.forward_camera(cam["fx"], cam["fy"], cam["cx"], cam["cy"], cam["image_size"],
                                           cam["offset"])
        ls = scan(scene, pattern, pose, range_noise=args.range_noise, seed=args.seed, frame_id="000000")
        out = Path(args.output)
        sio.write_kitti_bin(out / "velodyne" / "000000.bin", ls.cloud)
        sio.write_kitti_calib(out / "calib" / "000000.txt", calib)
        sio.write_kitti_labels(out / "label_2" / "000000.txt", [annotation_box(b) for b in ls.boxes], calib,
                               [o.class_label for o in scene.objects])
        sio.write_masks(out / "masks", "000000", render_masks(scene, pattern, calib, pose))
        print(json.dumps({"frames": 1, "points": len(ls.cloud)}))
        return EXIT_OK
    ids = simulate_dataset(args.output, args.frames, args.preset, args.seed, range_noise=args.range_noise)
    print(json.dumps({"frames": len(ids)}))
    return EXIT_OK


def cmd_eval(args) -> int:
    clouds = [sio.read_cloud(p) for p in (args.raw_a, args.raw_b, args.norm_a, args.norm_b)]
    mesh = sio.read_mesh(args.mesh) if args.mesh else None
    metrics = eval_normalization(*clouds, ground_truth_mesh=mesh, d_ideal=args.d_ideal)
    text = json.dumps(metrics, indent=2, sort_keys=True)
    if args.output:
        sio.write_json(args.output, metrics)
    print(text)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="scannorm", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="full pipeline over a KITTI-style directory")
    p.add_argument("input", type=Path)
    p.add_argument("output", type=Path)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out-format", choices=["bin", "ply"])
    _add_config_flags(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("isolate", help="write one PLY per isolated object")
    p.add_argument("cloud", type=Path)
    p.add_argument("output", type=Path)
    p.add_argument("--input-dir", type=Path, help="dataset root holding calib/, label_2/, masks/")
    _add_config_flags(p)
    p.set_defaults(func=cmd_isolate)

    p = sub.add_parser("complete", help="mesh an object PLY")
    p.add_argument("instance", type=Path)
    p.add_argument("output", type=Path)
    p.add_argument("--sensor-origin", type=float, nargs=3)
    _add_config_flags(p)
    p.set_defaults(func=cmd_complete)

    p = sub.add_parser("sample", help="resample a mesh PLY")
    p.add_argument("mesh", type=Path)
    p.add_argument("instance", type=Path, help="the object PLY the mesh was built from")
    p.add_argument("output", type=Path)
    p.add_argument("--sensor-origin", type=float, nargs=3)
    _add_config_flags(p)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("simulate", help="write simulated frames with labels, calib and masks")
    p.add_argument("output", type=Path)
    p.add_argument("--frames", type=int, default=10)
    p.add_argument("--preset", default="kitti64")
    p.add_argument("--scene", type=Path, help="JSON scene description (writes one frame)")
    p.add_argument("--range-noise", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("eval", help="chamfer and density metrics for two scans of one scene")
    p.add_argument("--raw-a", type=Path, required=True)
    p.add_argument("--raw-b", type=Path, required=True)
    p.add_argument("--norm-a", type=Path, required=True)
    p.add_argument("--norm-b", type=Path, required=True)
    p.add_argument("--mesh", type=Path)
    p.add_argument("--d-ideal", type=float, default=0.05)
    p.add_argument("--output", type=Path)
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ScanNormError, ValueError, FileNotFoundError, KeyError) as exc:
        log.error("%s: %s", type(exc).__name__, exc)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
