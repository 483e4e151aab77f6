"""Per-frame orchestration (isolate, complete, sample), batch runs and evaluation."""
from __future__ import annotations

import hashlib
import time
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from . import io as sio
from .errors import EmptyCloud, ScanNormError
from .geometry import BoundingBox3, PointCloud, RigidTransform, TriangleMesh, chamfer_distance, points_to_mesh_distance
from .isolation import KITTI, NUSCENES, Calibration, ClusterParams, SensorConfig, cluster_eps, isolate_frame
from .sampling import SamplingParams, sample_semi_canonical, upsampling_factor
from .surface import AlphaParams, BpaParams, complete_surface, default_radii

MODES = ("source_boxes", "target_masks")
SENSORS = {"kitti": KITTI, "nuscenes": NUSCENES}


@dataclass(frozen=True)
class PipelineConfig:
    sensor: SensorConfig = KITTI
    cluster: ClusterParams = ClusterParams()
    sc_method: str = "bpa"
    bpa: BpaParams = BpaParams()
    alpha_shape: AlphaParams = AlphaParams()
    min_points: int = 50
    sampling: SamplingParams = SamplingParams()
    z_offset: float = 0.0
    mode: str = "source_boxes"
    replace_objects: bool = True
    mask_shrink: float = 0.02
    classes: tuple = ("Car",)
    min_score: float = 0.5

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.sc_method not in ("bpa", "alpha"):
            raise ValueError("sc_method must be 'bpa' or 'alpha'")
        if self.min_points < 1:
            raise ValueError("min_points must be >= 1")
        if not 0.0 <= self.mask_shrink < 1.0:
            raise ValueError("mask_shrink must be in [0, 1)")

    @property
    def origin(self) -> tuple:
        """Sensor position after the z offset has been applied."""
        return (0.0, 0.0, float(self.z_offset))

    @property
    def sc_params(self):
        return self.bpa if self.sc_method == "bpa" else self.alpha_shape

    @classmethod
    def from_dict(cls, d: dict, base: "PipelineConfig | None" = None) -> "PipelineConfig":
        """Build from flat keys (TOML file or CLI); unknown keys are rejected."""
        cfg = base or cls()
        d = {k.replace("-", "_"): v for k, v in d.items() if v is not None}
        unknown = set(d) - _CONFIG_KEYS
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        sensor = cfg.sensor
        if "sensor" in d:
            if d["sensor"] not in SENSORS:
                raise ValueError(f"sensor must be one of {sorted(SENSORS)}")
            sensor = SENSORS[d["sensor"]]
        if "vfov" in d or "num_rings" in d:
            sensor = SensorConfig(float(d.get("vfov", sensor.vfov_deg)), int(d.get("num_rings", sensor.num_rings)))
        cluster = ClusterParams(float(d.get("alpha", cfg.cluster.alpha)), int(d.get("min_pts", cfg.cluster.min_pts)))
        bpa = cfg.bpa
        if "bpa_max_radius" in d or "bpa_radius_count" in d:
            old = bpa.radii
            bpa = BpaParams(default_radii(float(d.get("bpa_max_radius", old[-1])),
                                          int(d.get("bpa_radius_count", len(old)))), bpa.normal_k)
        if "normal_k" in d:
            bpa = BpaParams(bpa.radii, int(d["normal_k"]))
        alpha_shape = AlphaParams(float(d["alpha_radius"])) if "alpha_radius" in d else cfg.alpha_shape
        samp = {k: d[k] for k in ("strategy", "d_ideal", "sa_density", "beta_max", "vl_pattern") if k in d}
        sampling = replace(cfg.sampling, **samp) if samp else cfg.sampling
        replace_objects = cfg.replace_objects
        if "keep_original" in d:
            replace_objects = not bool(d["keep_original"])
        if "replace_objects" in d:
            replace_objects = bool(d["replace_objects"])
        return cls(
            sensor=sensor, cluster=cluster, sc_method=d.get("sc_method", cfg.sc_method), bpa=bpa,
            alpha_shape=alpha_shape, min_points=int(d.get("min_points", cfg.min_points)),
            sampling=sampling, z_offset=float(d.get("z_offset", cfg.z_offset)),
            mode=d.get("mode", cfg.mode), replace_objects=replace_objects,
            mask_shrink=float(d.get("mask_shrink", cfg.mask_shrink)),
            classes=tuple(d.get("classes", cfg.classes)), min_score=float(d.get("min_score", cfg.min_score)),
        )

    @classmethod
    def from_toml(cls, path, overrides: dict | None = None) -> "PipelineConfig":
        try:
            import tomllib
        except ModuleNotFoundError:  # python < 3.11
            import tomli as tomllib
        with open(path, "rb") as f:
            data = tomllib.load(f)
        data.pop("seed", None)
        cfg = cls.from_dict(data)
        return cls.from_dict(overrides, cfg) if overrides else cfg

    def to_dict(self) -> dict:
        return {
            "sensor": {"vfov_deg": self.sensor.vfov_deg, "num_rings": self.sensor.num_rings},
            "alpha": self.cluster.alpha, "min_pts": self.cluster.min_pts,
            "sc_method": self.sc_method, "bpa_radii": list(self.bpa.radii), "normal_k": self.bpa.normal_k,
            "alpha_radius": self.alpha_shape.alpha, "min_points": self.min_points,
            "sampling": asdict(self.sampling), "z_offset": self.z_offset, "mode": self.mode,
            "replace_objects": self.replace_objects, "mask_shrink": self.mask_shrink,
            "classes": list(self.classes), "min_score": self.min_score,
        }


_CONFIG_KEYS = {
    "sensor", "vfov", "num_rings", "alpha", "min_pts", "bpa_max_radius", "bpa_radius_count", "normal_k",
    "alpha_radius", "strategy", "d_ideal", "sa_density", "beta_max", "vl_pattern", "keep_original",
    "replace_objects", "sc_method", "min_points", "z_offset", "mode", "mask_shrink", "classes", "min_score",
}


@dataclass
class FrameInputs:
    """Annotations for one frame: lidar-frame boxes or camera masks (+ calibration)."""

    boxes: list | None = None
    box_labels: list | None = None
    masks: list | None = None
    calib: Calibration | None = None


@dataclass
class FrameReport:
    frame_id: str
    instances: list = field(default_factory=list)
    timings_ms: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"frame_id": self.frame_id, "instances": self.instances, "timings_ms": self.timings_ms}


@dataclass
class SemiCanonicalCloud:
    background: PointCloud
    objects: list = field(default_factory=list)  # (provenance dict, PointCloud)

    @property
    def assembled(self) -> PointCloud:
        return PointCloud.concatenate([self.background] + [c for _, c in self.objects],
                                      frame_id=self.background.frame_id)


def derive_seed(*parts) -> int:
    """Stable 63-bit seed from arbitrary parts (order matters)."""
    h = hashlib.sha256("\x1f".join(str(p) for p in parts).encode()).digest()
    return int.from_bytes(h[:8], "little") & ((1 << 63) - 1)


def _shift_calib(calib: Calibration, dz: float) -> Calibration:
    undo = RigidTransform.from_rt(np.eye(3), (0.0, 0.0, -dz))
    label = calib.label_from_lidar @ undo if calib.label_from_lidar is not None else None
    return Calibration(calib.extrinsic @ undo, calib.intrinsic, calib.image_size, label)


def run_frame(cloud: PointCloud, inputs: FrameInputs, config: PipelineConfig = PipelineConfig(),
              seed: int = 0) -> tuple[SemiCanonicalCloud, FrameReport]:
    """Normalize the objects of one frame.

    Instance-level failures are recorded in the report; the frame itself
    always produces an output cloud.
    """
    t_all = time.perf_counter()
    dz = float(config.z_offset)
    cloud = cloud.translated((0.0, 0.0, dz)) if dz else cloud
    sensor = replace(config.sensor, origin=config.origin)
    report = FrameReport(cloud.frame_id)
    timings = {"isolate": 0.0, "complete": 0.0, "sample": 0.0}

    t0 = time.perf_counter()
    if config.mode == "source_boxes":
        boxes = inputs.boxes or []
        if dz:
            boxes = [BoundingBox3((b.center[0], b.center[1], b.center[2] + dz), b.dims, b.yaw) for b in boxes]
        iso = isolate_frame(cloud, boxes=boxes, config=sensor, params=config.cluster,
                            min_points=config.min_points, box_labels=inputs.box_labels)
    else:
        if inputs.calib is None:
            raise ValueError("mask mode needs a calibration")
        calib = _shift_calib(inputs.calib, dz) if dz else inputs.calib
        iso = isolate_frame(cloud, masks=inputs.masks or [], calib=calib, config=sensor,
                            params=config.cluster, min_points=config.min_points,
                            mask_shrink=config.mask_shrink)
    timings["isolate"] = (time.perf_counter() - t0) * 1e3

    for sk in iso.skipped:
        report.instances.append({"index": sk.index, "source": sk.source, "status": "skipped",
                                 "reason": sk.reason, "points_before": 0, "points_after": 0})

    removed = np.zeros(len(cloud), dtype=bool)
    objects = []
    for k, inst in enumerate(iso.instances):
        d_o = inst.origin_distance
        rec = {
            "index": k, "source": inst.source, "source_index": inst.source_index, "class": inst.class_label,
            "points_before": len(inst.points), "points_after": len(inst.points),
            "d_o": d_o, "eps": inst.eps if inst.eps is not None else cluster_eps(d_o, sensor, config.cluster),
            "beta": upsampling_factor(d_o, sensor, config.sampling),
            "overlap_points": inst.overlap_points, "status": inst.status, "reason": inst.reason,
        }
        report.instances.append(rec)
        if inst.status != "ok":
            continue
        try:
            t0 = time.perf_counter()
            mesh = complete_surface(inst, config.sc_method, config.sc_params, config.min_points, config.origin)
            timings["complete"] += (time.perf_counter() - t0) * 1e3
            rec["triangles"] = len(mesh)
            t0 = time.perf_counter()
            samples = sample_semi_canonical(mesh, inst, sensor, config.sampling,
                                            seed=derive_seed(seed, cloud.frame_id, k))
            timings["sample"] += (time.perf_counter() - t0) * 1e3
        except (ScanNormError, ValueError) as exc:
            rec["status"] = "pass_through"
            rec["reason"] = f"{type(exc).__name__}: {exc}"
            continue
        rec["points_after"] = len(samples)
        if config.replace_objects:
            removed[inst.indices] = True
        objects.append(({"index": k, "source": inst.source, "source_index": inst.source_index,
                         "class": inst.class_label,
                         "method": config.sc_method, "strategy": config.sampling.strategy}, samples))

    background = cloud.subset(np.nonzero(~removed)[0]) if removed.any() else cloud
    timings["total"] = (time.perf_counter() - t_all) * 1e3
    report.timings_ms = timings
    return SemiCanonicalCloud(background, objects), report


# ------------------------------------------------------------------- dataset

def list_frames(in_dir) -> list:
    vdir = Path(in_dir) / "velodyne"
    if not vdir.is_dir():
        return []
    return sorted(p for p in vdir.iterdir() if p.suffix in (".bin", ".ply"))


def load_frame_inputs(in_dir, frame_id: str, config: PipelineConfig) -> FrameInputs:
    in_dir = Path(in_dir)
    calib_path = in_dir / "calib" / f"{frame_id}.txt"
    calib = sio.read_kitti_calib(calib_path) if calib_path.exists() else None
    if config.mode == "source_boxes":
        label_path = in_dir / "label_2" / f"{frame_id}.txt"
        if not label_path.exists():
            return FrameInputs(boxes=[], box_labels=[], calib=calib)
        if calib is None:
            raise FileNotFoundError(f"labels need {calib_path}")
        labelled = sio.read_kitti_labels(label_path, calib, config.classes)
        return FrameInputs(boxes=[b for _, b in labelled], box_labels=[c for c, _ in labelled], calib=calib)
    if calib is None:
        raise FileNotFoundError(f"masks need {calib_path}")
    masks = sio.read_masks(in_dir / "masks", frame_id, calib.image_size, config.classes, config.min_score)
    return FrameInputs(masks=masks, calib=calib)


def _process_frame(job) -> dict:
    path, in_dir, out_dir, config, seed, out_format = job
    frame_id = path.stem
    try:
        cloud = sio.read_cloud(path)
        inputs = load_frame_inputs(in_dir, frame_id, config)
        sc, report = run_frame(cloud, inputs, config, seed=derive_seed(seed, frame_id))
        ext = out_format or path.suffix.lstrip(".")
        sio.write_cloud(Path(out_dir) / "velodyne" / f"{frame_id}.{ext}", sc.assembled)
        sio.write_json(Path(out_dir) / "reports" / f"{frame_id}.json", report.to_dict())
        return {"frame_id": frame_id, "ok": True, "report": report.to_dict()}
    except Exception as exc:  # noqa: BLE001 - a bad frame must not stop the run
        return {"frame_id": frame_id, "ok": False, "error": f"{type(exc).__name__}: {exc}"}


def _reason_key(rec: dict) -> str:
    reason = rec.get("reason", "")
    if rec["status"] == "pass_through" and "<" in reason and ":" not in reason:
        return "too_few_points"
    return reason.split(":", 1)[0] if reason else rec["status"]


def run_dataset(in_dir, out_dir, config: PipelineConfig = PipelineConfig(), seed: int = 0,
                workers: int = 1, out_format: str | None = None) -> dict:
    """Process every frame under ``in_dir/velodyne`` and write outputs to ``out_dir``.

    Returns the summary (also written to ``summary.json``); ``summary["failed"]``
    lists frames that could not be processed.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    jobs = [(p, Path(in_dir), out_dir, config, seed, out_format) for p in list_frames(in_dir)]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_process_frame, jobs))
    else:
        results = [_process_frame(j) for j in jobs]

    statuses, reasons, timings = Counter(), Counter(), Counter()
    for r in results:
        if not r["ok"]:
            continue
        for rec in r["report"]["instances"]:
            statuses[rec["status"]] += 1
            if rec["status"] != "ok":
                reasons[_reason_key(rec)] += 1
        for phase, ms in r["report"]["timings_ms"].items():
            timings[phase] += ms
    summary = {
        "frames": len(results),
        "succeeded": sum(r["ok"] for r in results),
        "failed": [{"frame_id": r["frame_id"], "error": r["error"]} for r in results if not r["ok"]],
        "instances": dict(sorted(statuses.items())),
        "skip_reasons": dict(sorted(reasons.items())),
        "timings_ms": dict(sorted(timings.items())),
        "seed": seed,
        "config": config.to_dict(),
    }
    sio.write_json(out_dir / "summary.json", summary)
    return summary


# ---------------------------------------------------------------- evaluation

def mean_nn_spacing(points) -> float:
    pts = np.asarray(points, dtype=np.float64)
    if len(pts) < 2:
        raise EmptyCloud("need at least two points for spacing")
    d, _ = cKDTree(pts).query(pts, k=2)
    return float(d[:, 1].mean())


def eval_normalization(raw_a: PointCloud, raw_b: PointCloud, norm_a: PointCloud, norm_b: PointCloud,
                       ground_truth_mesh: TriangleMesh | None = None, d_ideal: float = 0.05) -> dict:
    """Compare two scans of one scene before and after normalization."""
    for c in (raw_a, raw_b, norm_a, norm_b):
        if len(c) == 0:
            raise EmptyCloud("evaluation needs non-empty clouds")
    out = {
        "raw_chamfer": chamfer_distance(raw_a, raw_b),
        "normalized_chamfer": chamfer_distance(norm_a, norm_b),
        "density": {},
    }
    for name, c in (("raw_a", raw_a), ("raw_b", raw_b), ("norm_a", norm_a), ("norm_b", norm_b)):
        spacing = mean_nn_spacing(c.points) if len(c) > 1 else float("nan")
        out["density"][name] = {"points": len(c), "mean_nn_spacing": spacing,
                                "spacing_over_d_ideal": spacing / d_ideal}
    if ground_truth_mesh is not None:
        out["mesh_distance"] = {}
        for name, c in (("norm_a", norm_a), ("norm_b", norm_b), ("raw_a", raw_a), ("raw_b", raw_b)):
            d = points_to_mesh_distance(c.points, ground_truth_mesh)
            out["mesh_distance"][name] = {"median": float(np.median(d)), "p95": float(np.percentile(d, 95))}
    return out


# ---------------------------------------------------------------- simulation

KITTI_LIKE_CAMERA = dict(fx=721.5, fy=721.5, cx=609.6, cy=172.9, image_size=(1242, 375), offset=(0.27, 0.0, -0.08))


def simulate_dataset(out_dir, n_frames: int, preset: str = "kitti64", seed: int = 0,
                     cars=(1, 4), range_noise: float = 0.0) -> list:
    """Write a KITTI-like layout of simulated frames with labels, calib and masks.

    Returns the frame ids.  Ground-truth meshes go to ``gt/<id>_<k>.ply``.
    """
    from .scansim import annotation_box, make_pattern, random_scene, render_masks, scan, sensor_pose

    out_dir = Path(out_dir)
    pattern = make_pattern(preset)
    cam = KITTI_LIKE_CAMERA
    calib = Calibration.forward_camera(cam["fx"], cam["fy"], cam["cx"], cam["cy"], cam["image_size"], cam["offset"])
    pose = sensor_pose(pattern.mount_height)
    ids = []
    for f in range(n_frames):
        frame_id = f"{f:06d}"
        rng = np.random.default_rng(derive_seed(seed, "scene", frame_id))
        scene = random_scene(rng, int(rng.integers(cars[0], cars[1] + 1)))
        ls = scan(scene, pattern, pose, range_noise=range_noise, seed=derive_seed(seed, "noise", frame_id),
                  frame_id=frame_id)
        sio.write_kitti_bin(out_dir / "velodyne" / f"{frame_id}.bin", ls.cloud)
        sio.write_kitti_calib(out_dir / "calib" / f"{frame_id}.txt", calib)
        sio.write_kitti_labels(out_dir / "label_2" / f"{frame_id}.txt", [annotation_box(b) for b in ls.boxes], calib)
        sio.write_masks(out_dir / "masks", frame_id, render_masks(scene, pattern, calib, pose))
        for k, o in enumerate(scene.objects):
            sio.write_mesh(out_dir / "gt" / f"{frame_id}_{k}.ply", o.world_mesh().transformed(pose.inverse()))
        ids.append(frame_id)
    return ids
