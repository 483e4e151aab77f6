"""Object isolation: box crops (labelled data) or masks + VRES clustering."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy import ndimage

from .errors import EmptySelection, NoCluster, ScanNormError
from .geometry import BoundingBox3, PointCloud, RigidTransform, crop_by_box
from .kernels.cluster import dbscan_labels
from .spatial import NeighborIndex

DEFAULT_MIN_POINTS = 50


@dataclass(frozen=True, eq=False)
class Calibration:
    """Lidar-to-camera extrinsic, pinhole intrinsic and image size (w, h)."""

    extrinsic: RigidTransform
    intrinsic: np.ndarray
    image_size: tuple[int, int]
    label_from_lidar: RigidTransform | None = None

    def __post_init__(self):
        k = np.asarray(self.intrinsic, dtype=np.float64)
        if k.shape != (3, 3):
            raise ValueError("intrinsic must be 3x3")
        if k[0, 0] <= 0 or k[1, 1] <= 0:
            raise ValueError("focal lengths must be positive")
        w, h = (int(v) for v in self.image_size)
        if w <= 0 or h <= 0:
            raise ValueError("image size must be positive")
        object.__setattr__(self, "intrinsic", k)
        object.__setattr__(self, "image_size", (w, h))

    def label_frame(self) -> RigidTransform:
        """Lidar-to-frame transform of the annotation frame (defaults to the camera)."""
        return self.label_from_lidar if self.label_from_lidar is not None else self.extrinsic

    @classmethod
    def pinhole(cls, fx, fy, cx, cy, image_size, extrinsic=None) -> "Calibration":
        k = np.array([[fx, 0.0, cx], [0.0, fy, cy], [0.0, 0.0, 1.0]])
        return cls(extrinsic or RigidTransform.identity(), k, tuple(image_size))

    @classmethod
    def forward_camera(cls, fx, fy, cx, cy, image_size, offset=(0.0, 0.0, 0.0)) -> "Calibration":
        """Camera looking along lidar +x, placed at ``offset`` in the lidar frame.

        Camera axes follow the usual convention: x right, y down, z forward.
        """
        r = np.array([[0.0, -1.0, 0.0], [0.0, 0.0, -1.0], [1.0, 0.0, 0.0]])
        t = -r @ np.asarray(offset, dtype=np.float64)
        return cls.pinhole(fx, fy, cx, cy, image_size, RigidTransform.from_rt(r, t))


@dataclass(frozen=True, eq=False)
class InstanceMask:
    raster: np.ndarray
    class_label: str = "Car"
    score: float = 1.0
    instance_id: int = 0  # simulator ground truth; 0 when unknown

    def __post_init__(self):
        object.__setattr__(self, "raster", np.asarray(self.raster).astype(bool))

    @property
    def size(self) -> tuple[int, int]:
        h, w = self.raster.shape
        return (w, h)


@dataclass(frozen=True)
class SensorConfig:
    vfov_deg: float
    num_rings: int
    origin: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if not 0 < self.vfov_deg < 180:
            raise ValueError("vertical FOV must be in (0, 180) degrees")
        if int(self.num_rings) != self.num_rings or self.num_rings < 1:
            raise ValueError("ring count must be a positive integer")
        object.__setattr__(self, "origin", tuple(float(v) for v in self.origin))


KITTI = SensorConfig(26.8, 64)
NUSCENES = SensorConfig(40.0, 32)


@dataclass(frozen=True)
class ClusterParams:
    alpha: float = 5.0
    min_pts: int = 3

    def __post_init__(self):
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")
        if self.min_pts < 1:
            raise ValueError("min_pts must be >= 1")


@dataclass(eq=False)
class ObjectInstance:
    """Points of one object plus where they came from.

    ``indices`` point into the parent frame cloud; ``status`` is ``"ok"`` or
    ``"pass_through"`` (too few points for surface completion).
    """

    points: PointCloud
    source: str
    origin_distance: float
    parent_frame: str = ""
    indices: np.ndarray | None = None
    status: str = "ok"
    reason: str = ""
    eps: float | None = None
    class_label: str = "Car"
    box: BoundingBox3 | None = None
    overlap_points: int = 0
    source_index: int = -1  # position of the box or mask this came from

    def __post_init__(self):
        if len(self.points) == 0:
            raise ValueError("object instance needs at least one point")


class Projection(NamedTuple):
    index: np.ndarray
    u: np.ndarray
    v: np.ndarray
    depth: np.ndarray


def vres(config: SensorConfig) -> float:
    """Angular gap between rings, in degrees."""
    return config.vfov_deg / config.num_rings


def vertical_point_distance(d_o: float, config: SensorConfig) -> float:
    """Vertical spacing between adjacent rings at range ``d_o``."""
    if d_o < 0:
        raise ValueError("distance must be non-negative")
    return d_o * math.tan(math.radians(vres(config)))


def cluster_eps(d_o: float, config: SensorConfig, params: ClusterParams) -> float:
    return params.alpha * vertical_point_distance(d_o, config)


def object_distance(points: np.ndarray, origin=(0.0, 0.0, 0.0)) -> float:
    c = np.mean(points, axis=0) - np.asarray(origin, dtype=np.float64)
    return float(np.sqrt(np.sum(c * c)))


def project_to_image(cloud: PointCloud, calib: Calibration) -> Projection:
    """Continuous pixel coordinates of the points that land inside the image."""
    pts = cloud.points if isinstance(cloud, PointCloud) else np.asarray(cloud, float).reshape(-1, 3)
    cam = calib.extrinsic.apply(pts)
    depth = cam[:, 2]
    front = depth > 0
    uvw = cam @ calib.intrinsic.T
    with np.errstate(divide="ignore", invalid="ignore"):
        u = uvw[:, 0] / depth
        v = uvw[:, 1] / depth
    w, h = calib.image_size
    keep = front & (u >= 0) & (u < w) & (v >= 0) & (v < h)
    idx = np.nonzero(keep)[0]
    return Projection(idx, u[idx], v[idx], depth[idx])


def _disk(r: int) -> np.ndarray:
    y, x = np.mgrid[-r : r + 1, -r : r + 1]
    return x * x + y * y <= r * r


def shrink_radius(raster: np.ndarray, fraction: float) -> int:
    if fraction <= 0:
        return 0
    ys, xs = np.nonzero(raster)
    if ys.size == 0:
        return 0
    diag = math.hypot(xs.max() - xs.min() + 1, ys.max() - ys.min() + 1)
    return max(1, int(math.floor(fraction / 2.0 * diag + 0.5)))


def shrink_mask(mask: InstanceMask, fraction: float = 0.02) -> InstanceMask:
    """Erode the mask by a disk scaled to its bounding-box diagonal."""
    if not 0 <= fraction < 1:
        raise ValueError("shrink fraction must be in [0, 1)")
    r = shrink_radius(mask.raster, fraction)
    if r == 0:
        return InstanceMask(mask.raster.copy(), mask.class_label, mask.score, mask.instance_id)
    out = ndimage.binary_erosion(mask.raster, structure=_disk(r), border_value=0)
    return InstanceMask(out, mask.class_label, mask.score, mask.instance_id)


def _round_half_up(x: np.ndarray) -> np.ndarray:
    return np.floor(x + 0.5).astype(np.int64)


def mask_point_indices(cloud: PointCloud, mask: InstanceMask, calib: Calibration,
                       projection: Projection | None = None) -> np.ndarray:
    if mask.size != calib.image_size:
        raise ValueError(f"mask size {mask.size} != image size {calib.image_size}")
    proj = projection if projection is not None else project_to_image(cloud, calib)
    ui = _round_half_up(proj.u)
    vi = _round_half_up(proj.v)
    w, h = calib.image_size
    inside = (ui < w) & (vi < h)
    hit = np.zeros(proj.index.shape[0], dtype=bool)
    hit[inside] = mask.raster[vi[inside], ui[inside]]
    return np.sort(proj.index[hit])


def mask_isolate(cloud: PointCloud, mask: InstanceMask, calib: Calibration) -> PointCloud:
    """Points whose rounded projected pixel is foreground, in cloud order."""
    idx = mask_point_indices(cloud, mask, calib)
    if idx.size == 0:
        raise EmptySelection("mask contains no projected lidar points")
    return cloud.subset(idx)


def dbscan(points, eps: float, min_pts: int) -> np.ndarray:
    """DBSCAN labels (-1 = noise), renumbered 0.. by first member in input order.

    ``min_pts`` counts the point itself.
    """
    pts = np.ascontiguousarray(np.asarray(points, dtype=np.float64).reshape(-1, 3))
    if len(pts) == 0:
        return np.zeros(0, np.int64)
    indptr, indices, dist = NeighborIndex(pts).radius_graph(eps)
    raw = dbscan_labels(pts, indptr, indices, dist, int(min_pts))
    out = np.full(raw.shape, -1, dtype=np.int64)
    valid = raw >= 0
    _, first = np.unique(raw[valid], return_index=True)
    roots = raw[valid][np.sort(first)]
    remap = {int(r): k for k, r in enumerate(roots)}
    out[valid] = [remap[int(r)] for r in raw[valid]]
    return out


def select_largest_cluster(points: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Indices of the biggest cluster.

    Equal sizes go to the cluster whose centroid is closest to the centroid of
    all points; remaining ties to the lexicographically smallest centroid.
    """
    ids = np.unique(labels[labels >= 0])
    if ids.size == 0:
        raise NoCluster("all points are noise")
    center = points.mean(axis=0)
    best_key, best = None, None
    for cid in ids:
        members = np.nonzero(labels == cid)[0]
        cen = points[members].mean(axis=0)
        key = (-members.size, float(np.linalg.norm(cen - center)), tuple(cen))
        if best_key is None or key < best_key:
            best_key, best = key, members
    return best


def vres_cluster(points: PointCloud, config: SensorConfig, params: ClusterParams = ClusterParams(),
                 indices: np.ndarray | None = None, class_label: str = "Car") -> ObjectInstance:
    """Keep the largest DBSCAN cluster, with eps tied to the ring spacing at range."""
    if len(points) == 0:
        raise EmptySelection("no points to cluster")
    d_o = object_distance(points.points, config.origin)
    eps = cluster_eps(d_o, config, params)
    labels = dbscan(points.points, eps, params.min_pts)
    keep = select_largest_cluster(points.points, labels)
    sub = points.subset(keep)
    parent = indices[keep] if indices is not None else keep
    return ObjectInstance(
        points=sub,
        source="mask",
        origin_distance=object_distance(sub.points, config.origin),
        parent_frame=points.frame_id,
        indices=np.asarray(parent, dtype=np.int64),
        eps=eps,
        class_label=class_label,
    )


@dataclass
class SkippedInstance:
    index: int
    source: str
    reason: str


@dataclass
class IsolationResult:
    instances: list = field(default_factory=list)
    skipped: list = field(default_factory=list)


def isolate_frame(cloud: PointCloud, boxes=None, masks=None, calib: Calibration | None = None,
                  config: SensorConfig = KITTI, params: ClusterParams = ClusterParams(),
                  min_points: int = DEFAULT_MIN_POINTS, mask_shrink: float = 0.02,
                  box_labels=None) -> IsolationResult:
    """Isolate every annotated/masked object in one frame.

    Exactly one of ``boxes`` or ``masks`` must be given; masks also need
    ``calib``.  Instance failures are collected in ``skipped``.
    """
    if (boxes is None) == (masks is None):
        raise ValueError("give exactly one of boxes or masks")
    result = IsolationResult()

    if boxes is not None:
        for k, box in enumerate(boxes):
            idx = np.nonzero(box.contains(cloud.points))[0]
            if idx.size == 0:
                result.skipped.append(SkippedInstance(k, "box", "empty box"))
                continue
            sub = cloud.subset(idx)
            inst = ObjectInstance(
                points=sub, source="box",
                origin_distance=object_distance(sub.points, config.origin),
                parent_frame=cloud.frame_id, indices=idx, box=box,
                class_label=box_labels[k] if box_labels is not None else "Car", source_index=k,
            )
            _tag(inst, min_points)
            result.instances.append(inst)
        return result

    if calib is None:
        raise ValueError("mask mode needs a calibration")
    proj = project_to_image(cloud, calib)
    found = []
    for k, mask in enumerate(masks):
        try:
            shrunk = shrink_mask(mask, mask_shrink)
            if not shrunk.raster.any():
                raise EmptySelection("mask vanished after shrinking")
            idx = mask_point_indices(cloud, shrunk, calib, proj)
            if idx.size == 0:
                raise EmptySelection("mask contains no projected lidar points")
            inst = vres_cluster(cloud.subset(idx), config, params, indices=idx,
                                class_label=mask.class_label)
            inst.source_index = k
        except (ScanNormError, ValueError) as exc:
            result.skipped.append(SkippedInstance(k, "mask", f"{type(exc).__name__}: {exc}"))
            continue
        found.append(inst)

    _resolve_overlaps(cloud, found, config)  # may drop fully contested instances
    for inst in found:
        _tag(inst, min_points)
        result.instances.append(inst)
    return result


def _tag(inst: ObjectInstance, min_points: int) -> None:
    if len(inst.points) < min_points:
        inst.status = "pass_through"
        inst.reason = f"{len(inst.points)} points < {min_points}"


def _resolve_overlaps(cloud: PointCloud, found: list, config: SensorConfig) -> None:
    """Give each point claimed by several instances to the nearest cluster centroid."""
    if len(found) < 2:
        return
    owner: dict[int, list[int]] = {}
    for k, inst in enumerate(found):
        for i in inst.indices:
            owner.setdefault(int(i), []).append(k)
    contested = {i: ks for i, ks in owner.items() if len(ks) > 1}
    if not contested:
        return
    centroids = [inst.points.points.mean(axis=0) for inst in found]
    drop = {k: set() for k in range(len(found))}
    for i, ks in contested.items():
        p = cloud.points[i]
        win = min(ks, key=lambda k: (float(np.linalg.norm(p - centroids[k])), k))
        for k in ks:
            found[k].overlap_points += 1
            if k != win:
                drop[k].add(i)
    emptied = []
    for k, inst in enumerate(found):
        if not drop[k]:
            continue
        keep = np.array([i not in drop[k] for i in inst.indices])
        if not keep.any():
            emptied.append(k)
            continue
        inst.indices = inst.indices[keep]
        inst.points = cloud.subset(inst.indices)
        inst.origin_distance = object_distance(inst.points.points, config.origin)
    for k in reversed(emptied):
        del found[k]
