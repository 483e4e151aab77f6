"""Synthetic lidar: scan patterns, car proxies, ray casting, mask rendering.

The scene lives in a world frame with the ground at z = 0.  ``scan`` returns
points and boxes in the sensor frame, like a real lidar frame.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import UnknownPreset
from .geometry import BoundingBox3, PointCloud, RigidTransform, TriangleMesh, rot_z, wrap_angle
from .isolation import Calibration, InstanceMask, SensorConfig
from .kernels.raster import rasterize_ids
from .kernels.raycast import cast_rays

MAX_RANGE = 75.0


@dataclass(frozen=True, eq=False)
class SensorPattern:
    """Ray grid: every elevation is swept over ``floor(hfov / azimuth_step)`` azimuths.

    ``interleave`` holds a per-elevation offset (degrees) added on odd
    azimuth columns, which is how the foveated band is staggered.
    """

    kind: str
    elevations: np.ndarray
    azimuth_step: float
    hfov: float = 360.0
    max_range: float = MAX_RANGE
    interleave: np.ndarray | None = None
    mount_height: float = 1.73
    name: str = ""
    vfov: float | None = None

    def __post_init__(self):
        el = np.asarray(self.elevations, dtype=np.float64).reshape(-1)
        if el.size == 0 or np.any(np.diff(el) <= 0):
            raise ValueError("elevations must be strictly ascending")
        if self.azimuth_step <= 0:
            raise ValueError("azimuth step must be positive")
        if not 0 < self.hfov <= 360:
            raise ValueError("hfov must be in (0, 360]")
        object.__setattr__(self, "elevations", el)
        if self.interleave is not None:
            il = np.asarray(self.interleave, dtype=np.float64).reshape(-1)
            if il.shape != el.shape:
                raise ValueError("interleave offsets must match elevations")
            object.__setattr__(self, "interleave", il)

    @property
    def num_azimuths(self) -> int:
        return int(math.floor(self.hfov / self.azimuth_step + 1e-9))

    @property
    def num_rays(self) -> int:
        return self.elevations.size * self.num_azimuths

    def azimuths(self) -> np.ndarray:
        j = np.arange(self.num_azimuths)
        return self.hfov / 2.0 - (j + 0.5) * self.azimuth_step

    def ray_angles(self):
        """(elevation, azimuth) in degrees per ray, elevation-major order."""
        az = self.azimuths()
        el = np.repeat(self.elevations[:, None], az.size, axis=1)
        if self.interleave is not None:
            odd = (np.arange(az.size) % 2) == 1
            el = el + np.outer(self.interleave, odd)
        return el.reshape(-1), np.tile(az, self.elevations.size)

    def directions(self) -> np.ndarray:
        el, az = self.ray_angles()
        e, a = np.radians(el), np.radians(az)
        return np.stack([np.cos(e) * np.cos(a), np.cos(e) * np.sin(a), np.sin(e)], axis=1)

    def sensor_config(self, origin=(0.0, 0.0, 0.0)) -> SensorConfig:
        """VRES config: nominal FOV over the elevation count."""
        vfov = self.vfov if self.vfov is not None else float(self.elevations[-1] - self.elevations[0])
        return SensorConfig(vfov, int(self.elevations.size), origin)


def _uniform(lower, vfov, count):
    gap = vfov / count
    return lower + (np.arange(count) + 0.5) * gap


def _horizon_packed(lower, upper, count, width=4.0):
    # quantiles of a Cauchy-like density peaked at 0 deg, truncated to [lower, upper]
    lo, hi = math.atan(lower / width), math.atan(upper / width)
    q = (np.arange(count) + 0.5) / count
    return width * np.tan(lo + q * (hi - lo))


def _foveated(lower=-20.0, upper=10.0, count=128, band=(-8.0, 4.6)):
    n_band = int(round(count * 2 / 3))
    n_rest = count - n_band
    n_below = (n_rest + 1) // 2
    n_above = n_rest - n_below
    band_gap = (band[1] - band[0]) / n_band
    dense = band[0] + (np.arange(n_band) + 0.5) * band_gap
    below = _uniform(lower, band[0] - lower, n_below)
    above = _uniform(band[1], upper - band[1], n_above)
    el = np.concatenate([below, dense, above])
    inter = np.zeros(count)
    inter[n_below : n_below + n_band] = band_gap / 2.0
    return el, inter


PRESETS = ("kitti64", "nuscenes32", "waymo64", "baraja_foveated")


def make_pattern(preset: str, **overrides) -> SensorPattern:
    if preset == "kitti64":
        pat = SensorPattern("uniform_rings", _uniform(-24.8, 26.8, 64), 0.17,
                            mount_height=1.73, name=preset, vfov=26.8)
    elif preset == "nuscenes32":
        pat = SensorPattern("uniform_rings", _uniform(-30.0, 40.0, 32), 0.33,
                            mount_height=1.84, name=preset, vfov=40.0)
    elif preset == "waymo64":
        pat = SensorPattern("nonuniform_rings", _horizon_packed(-17.6, 2.4, 64), 0.14,
                            mount_height=2.0, name=preset, vfov=20.0)
    elif preset == "baraja_foveated":
        el, inter = _foveated()
        pat = SensorPattern("foveated_interleaved", el, 0.15, hfov=120.0, interleave=inter,
                            mount_height=2.2, name=preset, vfov=30.0)
    else:
        raise UnknownPreset(preset)
    return replace(pat, **overrides) if overrides else pat


@dataclass(eq=False)
class SceneObject:
    mesh: TriangleMesh  # in the box frame
    box: BoundingBox3  # world frame
    instance_id: int
    class_label: str = "Car"

    def world_mesh(self) -> TriangleMesh:
        return self.mesh.transformed(self.box.pose())


@dataclass(eq=False)
class Scene:
    objects: list = field(default_factory=list)
    ground_plane: bool = True

    def __post_init__(self):
        ids = [o.instance_id for o in self.objects]
        if len(set(ids)) != len(ids) or any(i <= 0 for i in ids):
            raise ValueError("instance ids must be unique and positive")

    def add_box(self, center, dims, yaw=0.0, instance_id=None, class_label="Obstacle") -> SceneObject:
        """Axis-aligned (in its own frame) cuboid, e.g. a pole or a wall."""
        iid = instance_id if instance_id is not None else len(self.objects) + 1
        obj = SceneObject(box_mesh(*dims), BoundingBox3(tuple(center), tuple(dims), yaw), iid, class_label)
        self.objects.append(obj)
        return obj

    def add_car(self, center_xy, yaw=0.0, dims=(4.5, 1.8, 1.5), instance_id=None) -> SceneObject:
        iid = instance_id if instance_id is not None else len(self.objects) + 1
        l, w, h = dims
        box = BoundingBox3((center_xy[0], center_xy[1], h / 2.0), dims, yaw)
        obj = SceneObject(car_proxy(l, w, h), box, iid)
        self.objects.append(obj)
        return obj


@dataclass(eq=False)
class LabeledScan:
    cloud: PointCloud
    instance_ids: np.ndarray
    boxes: list
    box_ids: list
    ring: np.ndarray | None = None

    def __post_init__(self):
        if len(self.instance_ids) != len(self.cloud):
            raise ValueError("one instance id per point required")

    def object_points(self, instance_id: int) -> np.ndarray:
        return self.cloud.points[self.instance_ids == instance_id]


def sensor_pose(height: float, x: float = 0.0, y: float = 0.0, yaw: float = 0.0) -> RigidTransform:
    """Sensor-to-world transform for a level sensor ``height`` above the ground."""
    return RigidTransform.from_rt(rot_z(yaw), (x, y, height))


def _pose_yaw(pose: RigidTransform) -> float:
    r = pose.rotation
    if not np.allclose(r[2], [0, 0, 1], atol=1e-9):
        raise ValueError("sensor pose must be level (rotation about z only)")
    return math.atan2(r[1, 0], r[0, 0])


def _scene_triangles(meshes):
    v0, v1, v2, starts, lo, hi = [], [], [], [0], [], []
    for m in meshes:
        a, b, c = m.corners()
        v0.append(a)
        v1.append(b)
        v2.append(c)
        starts.append(starts[-1] + len(m))
        lo.append(m.vertices.min(axis=0) - 1e-9)
        hi.append(m.vertices.max(axis=0) + 1e-9)
    if not meshes:
        z = np.zeros((0, 3))
        return z, z, z, np.zeros(1, np.int64), z, z
    return (np.ascontiguousarray(np.concatenate(v0)), np.ascontiguousarray(np.concatenate(v1)),
            np.ascontiguousarray(np.concatenate(v2)), np.asarray(starts, np.int64),
            np.asarray(lo), np.asarray(hi))


def cast_against_meshes(origin, dirs, meshes, max_range):
    """Nearest hit per ray over several meshes: (t, mesh index or -1)."""
    v0, v1, v2, starts, lo, hi = _scene_triangles(meshes)
    t, tri = cast_rays(np.asarray(origin, np.float64), np.ascontiguousarray(dirs), v0, v1, v2,
                       starts, lo, hi, float(max_range))
    owner = np.full(t.shape, -1, dtype=np.int64)
    hit = tri >= 0
    owner[hit] = np.searchsorted(starts, tri[hit], side="right") - 1
    return t, owner


def scan(scene: Scene, pattern: SensorPattern, pose: RigidTransform | None = None,
         range_noise: float = 0.0, seed: int = 0, frame_id: str = "") -> LabeledScan:
    """Cast every pattern ray into the scene and keep the nearest hits."""
    pose = pose if pose is not None else sensor_pose(pattern.mount_height)
    yaw = _pose_yaw(pose)
    origin = pose.translation
    dirs_s = pattern.directions()
    dirs = dirs_s @ pose.rotation.T
    meshes = [o.world_mesh() for o in scene.objects]
    t, owner = cast_against_meshes(origin, dirs, meshes, pattern.max_range)
    ids = np.zeros(t.shape, dtype=np.int64)
    hit_obj = owner >= 0
    obj_ids = np.array([o.instance_id for o in scene.objects], dtype=np.int64)
    ids[hit_obj] = obj_ids[owner[hit_obj]]

    if scene.ground_plane:
        with np.errstate(divide="ignore", invalid="ignore"):
            tg = -origin[2] / dirs[:, 2]
        tg = np.where((dirs[:, 2] < 0) & (tg > 0) & (tg <= pattern.max_range), tg, np.inf)
        ground = tg < t
        t = np.where(ground, tg, t)
        ids[ground] = 0

    valid = np.isfinite(t) & (t <= pattern.max_range)
    ring = np.repeat(np.arange(pattern.elevations.size), pattern.num_azimuths)[valid]
    rng_t = t[valid]
    if range_noise > 0:
        rng_t = rng_t + np.random.default_rng(seed).normal(0.0, range_noise, rng_t.shape)
    pts_sensor = dirs_s[valid] * rng_t[:, None]
    cloud = PointCloud(pts_sensor, np.full(pts_sensor.shape[0], 0.5), frame_id)

    inv = pose.inverse()
    boxes, box_ids = [], []
    for o in scene.objects:
        c = inv.apply(np.asarray(o.box.center)[None])[0]
        boxes.append(BoundingBox3(tuple(c), o.box.dims, wrap_angle(o.box.yaw - yaw)))
        box_ids.append(o.instance_id)
    return LabeledScan(cloud, ids[valid], boxes, box_ids, ring)


def _ear_clip(poly: np.ndarray) -> list:
    """Triangulate a simple counter-clockwise polygon."""
    idx = list(range(len(poly)))
    out = []

    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    while len(idx) > 3:
        for k in range(len(idx)):
            i0, i1, i2 = idx[k - 1], idx[k], idx[(k + 1) % len(idx)]
            a, b, c = poly[i0], poly[i1], poly[i2]
            if cross(a, b, c) <= 0:
                continue
            if any(
                cross(a, b, poly[j]) >= 0 and cross(b, c, poly[j]) >= 0 and cross(c, a, poly[j]) >= 0
                for j in idx if j not in (i0, i1, i2)
            ):
                continue
            out.append((i0, i1, i2))
            idx.pop(k)
            break
        else:
            raise ValueError("polygon is not simple")
    out.append(tuple(idx))
    return out


def car_profile(length: float, height: float) -> np.ndarray:
    """Counter-clockwise side profile (x forward, z up) of the car proxy."""
    L, H = length, height
    return np.array([
        [-0.50 * L, 0.00 * H],
        [0.50 * L, 0.00 * H],
        [0.50 * L, 0.45 * H],
        [0.42 * L, 0.55 * H],  # bevelled nose
        [0.15 * L, 0.58 * H],  # hood
        [0.00 * L, 1.00 * H],  # windscreen
        [-0.32 * L, 1.00 * H],  # roof
        [-0.45 * L, 0.60 * H],  # rear window
        [-0.50 * L, 0.55 * H],
    ])


def car_proxy(length: float = 4.5, width: float = 1.8, height: float = 1.5) -> TriangleMesh:
    """Closed car-shaped mesh centered on its bounding box.

    A body-plus-cabin side profile extruded across the width, so the mesh is
    watertight and mirror-symmetric in y.
    """
    if min(length, width, height) <= 0:
        raise ValueError("car dimensions must be positive")
    prof = car_profile(length, height)
    prof = prof - np.array([0.0, height / 2.0])
    n = len(prof)
    hw = width / 2.0
    left = np.c_[prof[:, 0], np.full(n, hw), prof[:, 1]]
    right = np.c_[prof[:, 0], np.full(n, -hw), prof[:, 1]]
    verts = np.concatenate([left, right])
    tris = []
    # profile is CCW in (x, z); seen from +y that is clockwise, so flip the caps
    for a, b, c in _ear_clip(prof):
        tris.append((a, c, b))
        tris.append((a + n, b + n, c + n))
    for k in range(n):
        a, b = k, (k + 1) % n
        tris.append((a, b, b + n))
        tris.append((a, b + n, a + n))
    return TriangleMesh(verts, np.asarray(tris), None, {"method": "car_proxy"})


def box_mesh(length: float, width: float, height: float) -> TriangleMesh:
    """Closed cuboid centered at the origin with outward-facing triangles."""
    if min(length, width, height) <= 0:
        raise ValueError("box dimensions must be positive")
    sx, sy, sz = length / 2.0, width / 2.0, height / 2.0
    verts = np.array([[x, y, z] for x in (-sx, sx) for y in (-sy, sy) for z in (-sz, sz)])
    quads = [(0, 1, 3, 2), (4, 6, 7, 5), (0, 4, 5, 1), (2, 3, 7, 6), (0, 2, 6, 4), (1, 5, 7, 3)]
    tris = []
    for a, b, c, d in quads:
        tris += [(a, b, c), (a, c, d)]
    return TriangleMesh(verts, np.asarray(tris), None, {"method": "box"})


def render_masks(scene: Scene, pattern: SensorPattern | None, camera: Calibration,
                 pose: RigidTransform | None = None, class_label: str = "Car") -> list:
    """Ground-truth silhouettes of every visible object, as seen by ``camera``.

    The camera extrinsic is relative to the lidar, so a non-zero camera
    offset reproduces camera/lidar parallax.
    """
    if not scene.objects:
        return []
    if pose is None:
        pose = sensor_pose(pattern.mount_height if pattern is not None else 1.73)
    world_to_cam = camera.extrinsic @ pose.inverse()
    w, h = camera.image_size
    all_uv, all_inv, all_tris, all_ids, off = [], [], [], [], 0
    for o in scene.objects:
        m = o.world_mesh()
        cam = world_to_cam.apply(m.vertices)
        depth = cam[:, 2]
        tri_ok = np.all(depth[m.triangles] > 1e-3, axis=1)
        if pattern is not None:
            rng = np.linalg.norm(m.vertices - pose.translation, axis=1)
            if rng.min() > pattern.max_range:
                continue
        uvw = cam @ camera.intrinsic.T
        with np.errstate(divide="ignore", invalid="ignore"):
            uv = uvw[:, :2] / depth[:, None]
        uv = np.where(np.isfinite(uv), uv, 0.0)
        all_uv.append(uv)
        all_inv.append(np.where(depth > 0, 1.0 / np.maximum(depth, 1e-12), 0.0))
        all_tris.append(m.triangles[tri_ok] + off)
        all_ids.append(np.full(int(tri_ok.sum()), o.instance_id, dtype=np.int64))
        off += m.vertices.shape[0]
    if not all_uv:
        return []
    ids = rasterize_ids(np.ascontiguousarray(np.concatenate(all_uv)), np.concatenate(all_inv),
                        np.ascontiguousarray(np.concatenate(all_tris)), np.concatenate(all_ids), w, h)
    masks = []
    for o in scene.objects:
        raster = ids == o.instance_id
        if raster.any():
            masks.append(InstanceMask(raster, class_label, 1.0, instance_id=o.instance_id))
    return masks


def random_scene(rng: np.random.Generator, n_cars: int = 3, x_range=(5.0, 30.0),
                 half_angle_deg: float = 35.0, min_gap: float = 6.0, max_tries: int = 1000) -> Scene:
    """Cars with random size, heading and position ahead of the sensor.

    Centers stay within ``half_angle_deg`` of the +x axis so a forward
    camera sees them; centers are at least ``min_gap`` apart.
    """
    scene = Scene()
    centers = []
    tries = 0
    while len(centers) < n_cars:
        tries += 1
        if tries > max_tries:
            raise ValueError("could not place cars without overlap")
        x = rng.uniform(*x_range)
        y = rng.uniform(-1.0, 1.0) * x * math.tan(math.radians(half_angle_deg))
        if any(math.hypot(x - cx, y - cy) < min_gap for cx, cy in centers):
            continue
        dims = (rng.uniform(3.8, 4.8), rng.uniform(1.6, 1.9), rng.uniform(1.4, 1.7))
        scene.add_car((x, y), yaw=rng.uniform(-math.pi, math.pi), dims=dims)
        centers.append((x, y))
    return scene


def annotation_box(box: BoundingBox3, margin: float = 0.05) -> BoundingBox3:
    """Label-style box: grown by ``margin`` horizontally, lifted by ``margin``.

    Simulated surfaces lie exactly on the tight box faces, so a tight crop
    loses points to rounding; lifting keeps ground returns out of the crop.
    """
    l, w, h = box.dims
    c = box.center
    return BoundingBox3((c[0], c[1], c[2] + margin), (l + 2 * margin, w + 2 * margin, h), box.yaw)


def scene_from_dict(d: dict, base_dir=".") -> Scene:
    """Scene from a JSON-style description.

    Each object has ``type`` ``car`` (center_xy, yaw, dims), ``box``
    (center, dims, yaw) or ``mesh`` (path to a PLY in its box frame, plus a
    ``box`` dict with center/dims/yaw).
    """
    from pathlib import Path

    from .io import read_mesh

    scene = Scene(ground_plane=bool(d.get("ground_plane", True)))
    for k, od in enumerate(d.get("objects", [])):
        iid = int(od.get("instance_id", k + 1))
        kind = od.get("type", "car")
        if kind == "car":
            scene.add_car(od["center"][:2], float(od.get("yaw", 0.0)), tuple(od.get("dims", (4.5, 1.8, 1.5))), iid)
        elif kind == "box":
            scene.add_box(od["center"], od["dims"], float(od.get("yaw", 0.0)), iid,
                          od.get("class", "Obstacle"))
        elif kind == "mesh":
            b = od["box"]
            box = BoundingBox3(tuple(b["center"]), tuple(b["dims"]), float(b.get("yaw", 0.0)))
            mesh = read_mesh(Path(base_dir) / od["path"])
            scene.objects.append(SceneObject(mesh, box, iid, od.get("class", "Car")))
        else:
            raise ValueError(f"unknown scene object type {kind!r}")
    scene.__post_init__()
    return scene
