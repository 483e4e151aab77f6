"""Geometric value types, rigid transforms and distance metrics."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .errors import EmptyCloud, EmptyMesh
from .kernels.closest import closest_points_numpy, min_distance_to_candidates, min_distance_to_triangles


def _as_points(a) -> np.ndarray:
    pts = np.asarray(a, dtype=np.float64)
    if pts.size == 0:
        return np.zeros((0, 3))
    pts = pts.reshape(-1, 3)
    return pts


@dataclass(frozen=True, eq=False)
class PointCloud:
    """Unordered 3D points (N, 3) in the sensor frame, with optional intensity."""

    points: np.ndarray
    intensity: np.ndarray | None = None
    frame_id: str = ""

    def __post_init__(self):
        pts = _as_points(self.points)
        if not np.all(np.isfinite(pts)):
            raise ValueError("point cloud contains non-finite coordinates")
        object.__setattr__(self, "points", pts)
        if self.intensity is not None:
            inten = np.asarray(self.intensity, dtype=np.float64).reshape(-1)
            if inten.shape[0] != pts.shape[0]:
                raise ValueError(
                    f"intensity has {inten.shape[0]} values for {pts.shape[0]} points"
                )
            object.__setattr__(self, "intensity", inten)

    def __len__(self) -> int:
        return self.points.shape[0]

    def subset(self, index) -> "PointCloud":
        inten = None if self.intensity is None else self.intensity[index]
        return PointCloud(self.points[index], inten, self.frame_id)

    def translated(self, offset) -> "PointCloud":
        return PointCloud(self.points + np.asarray(offset, float), self.intensity, self.frame_id)

    @staticmethod
    def concatenate(clouds, frame_id: str = "") -> "PointCloud":
        clouds = list(clouds)
        if not clouds:
            return PointCloud(np.zeros((0, 3)), None, frame_id)
        pts = np.concatenate([c.points for c in clouds], axis=0)
        if any(c.intensity is not None for c in clouds):
            inten = np.concatenate(
                [c.intensity if c.intensity is not None else np.zeros(len(c)) for c in clouds]
            )
        else:
            inten = None
        return PointCloud(pts, inten, frame_id)


@dataclass(frozen=True)
class BoundingBox3:
    """Oriented box: center (x, y, z), dims (length, width, height), yaw about z."""

    center: tuple[float, float, float]
    dims: tuple[float, float, float]
    yaw: float = 0.0

    def __post_init__(self):
        c = tuple(float(v) for v in self.center)
        d = tuple(float(v) for v in self.dims)
        if len(c) != 3 or len(d) != 3:
            raise ValueError("center and dims need three components")
        if min(d) <= 0:
            raise ValueError(f"box dims must be positive, got {d}")
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "dims", d)
        object.__setattr__(self, "yaw", wrap_angle(float(self.yaw)))

    def to_box_frame(self, points: np.ndarray) -> np.ndarray:
        cs, sn = np.cos(self.yaw), np.sin(self.yaw)
        d = np.asarray(points, float) - np.asarray(self.center)
        return np.stack(
            [cs * d[:, 0] + sn * d[:, 1], -sn * d[:, 0] + cs * d[:, 1], d[:, 2]], axis=1
        )

    def contains(self, points: np.ndarray) -> np.ndarray:
        local = self.to_box_frame(_as_points(points))
        half = np.asarray(self.dims) / 2.0
        return np.all(np.abs(local) <= half, axis=1)

    def pose(self) -> "RigidTransform":
        return RigidTransform.from_rt(rot_z(self.yaw), self.center)


def wrap_angle(a: float) -> float:
    """Map an angle to (-pi, pi]."""
    w = np.fmod(a + np.pi, 2 * np.pi)
    if w <= 0:
        w += 2 * np.pi
    return float(w - np.pi)


def rot_z(theta: float) -> np.ndarray:
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


@dataclass(frozen=True, eq=False)
class RigidTransform:
    matrix: np.ndarray = field(default_factory=lambda: np.eye(4))

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=np.float64)
        if m.shape != (4, 4):
            raise ValueError("rigid transform must be 4x4")
        if not np.allclose(m[3], [0, 0, 0, 1], atol=1e-12):
            raise ValueError("last row must be (0, 0, 0, 1)")
        r = m[:3, :3]
        if abs(np.linalg.det(r) - 1.0) > 1e-6 or not np.allclose(r @ r.T, np.eye(3), atol=1e-6):
            raise ValueError("rotation block is not a proper rotation")
        object.__setattr__(self, "matrix", m)

    @classmethod
    def from_rt(cls, rotation, translation) -> "RigidTransform":
        m = np.eye(4)
        m[:3, :3] = rotation
        m[:3, 3] = translation
        return cls(m)

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(np.eye(4))

    @property
    def rotation(self) -> np.ndarray:
        return self.matrix[:3, :3]

    @property
    def translation(self) -> np.ndarray:
        return self.matrix[:3, 3]

    def apply(self, points) -> np.ndarray:
        pts = _as_points(points)
        return pts @ self.rotation.T + self.translation

    def inverse(self) -> "RigidTransform":
        rt = self.rotation.T
        return RigidTransform.from_rt(rt, -rt @ self.translation)

    def __matmul__(self, other: "RigidTransform") -> "RigidTransform":
        return RigidTransform(self.matrix @ other.matrix)


@dataclass(frozen=True, eq=False)
class TriangleMesh:
    """Indexed triangle set. ``normals`` are per-vertex and may be None."""

    vertices: np.ndarray
    triangles: np.ndarray
    normals: np.ndarray | None = None
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        v = _as_points(self.vertices)
        t = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        if t.size and (t.min() < 0 or t.max() >= v.shape[0]):
            raise ValueError("triangle index out of range")
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "triangles", t)
        if self.normals is not None:
            n = np.asarray(self.normals, dtype=np.float64).reshape(-1, 3)
            if n.shape != v.shape:
                raise ValueError("normals must match vertices")
            object.__setattr__(self, "normals", n)

    def __len__(self) -> int:
        return self.triangles.shape[0]

    def corners(self):
        v, t = self.vertices, self.triangles
        return v[t[:, 0]], v[t[:, 1]], v[t[:, 2]]

    def triangle_areas(self) -> np.ndarray:
        a, b, c = self.corners()
        return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)

    def area(self) -> float:
        return float(self.triangle_areas().sum())

    def edges(self) -> np.ndarray:
        """Unique undirected edges as sorted index pairs."""
        t = self.triangles
        e = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
        e.sort(axis=1)
        return np.unique(e, axis=0)

    def edge_valence(self) -> dict:
        t = self.triangles
        e = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
        e.sort(axis=1)
        keys, counts = np.unique(e, axis=0, return_counts=True)
        return {tuple(k): int(c) for k, c in zip(keys, counts)}

    def check(self) -> None:
        """Raise ValueError if the mesh breaks the area or normal invariants."""
        if len(self) and self.triangle_areas().min() <= 1e-12:
            raise ValueError("mesh has a degenerate triangle")
        if self.normals is not None and len(self.normals):
            lens = np.linalg.norm(self.normals, axis=1)
            if np.max(np.abs(lens - 1.0)) > 1e-6:
                raise ValueError("mesh normals are not unit length")

    def transformed(self, tf: RigidTransform) -> "TriangleMesh":
        n = None if self.normals is None else self.normals @ tf.rotation.T
        return TriangleMesh(tf.apply(self.vertices), self.triangles.copy(), n, dict(self.provenance))

    @staticmethod
    def merge(meshes) -> "TriangleMesh":
        verts, tris, off = [], [], 0
        for m in meshes:
            verts.append(m.vertices)
            tris.append(m.triangles + off)
            off += m.vertices.shape[0]
        if not verts:
            return TriangleMesh(np.zeros((0, 3)), np.zeros((0, 3), np.int64))
        return TriangleMesh(np.concatenate(verts), np.concatenate(tris))


def crop_by_box(cloud: PointCloud, box: BoundingBox3) -> PointCloud:
    """Points inside ``box``; points on a face count as inside."""
    return cloud.subset(np.nonzero(box.contains(cloud.points))[0])


def chamfer_distance(a: PointCloud, b: PointCloud) -> float:
    """Symmetric chamfer: half the mean a->b NN distance plus half the mean b->a."""
    pa = a.points if isinstance(a, PointCloud) else _as_points(a)
    pb = b.points if isinstance(b, PointCloud) else _as_points(b)
    if len(pa) == 0 or len(pb) == 0:
        raise EmptyCloud("chamfer distance needs two non-empty clouds")
    dab, _ = cKDTree(pb).query(pa)
    dba, _ = cKDTree(pa).query(pb)
    return 0.5 * float(np.mean(dab)) + 0.5 * float(np.mean(dba))


def points_to_mesh_distance(points, mesh: TriangleMesh) -> np.ndarray:
    if len(mesh) == 0:
        raise EmptyMesh("mesh has no triangles")
    pts = np.ascontiguousarray(_as_points(points))
    a, b, c = (np.ascontiguousarray(v) for v in mesh.corners())
    if len(pts) * len(a) <= BRUTE_PAIRS:
        return min_distance_to_triangles(pts, a, b, c)[0]
    indptr, cand = _candidate_triangles(pts, a, b, c)
    return min_distance_to_candidates(pts, a, b, c, indptr, cand)[0]


BRUTE_PAIRS = 1 << 16


def _candidate_triangles(pts, a, b, c, k=4):
    """Per point, every triangle that could be the nearest one (CSR, sorted).

    The distance to the triangles of the ``k`` nearest centroids bounds the
    answer.  A triangle can only beat that bound if its centroid lies within
    bound plus its reach (farthest vertex from the centroid); triangles are
    bucketed by reach so a few long ones do not widen every query.
    """
    cen = (a + b + c) / 3.0
    reach = np.sqrt(np.max([np.einsum("ij,ij->i", v - cen, v - cen) for v in (a, b, c)], axis=0))
    tree = cKDTree(cen)
    k = min(k, len(cen))
    _, near = tree.query(pts, k)
    near = near.reshape(len(pts), k)
    q = closest_points_numpy(pts[:, None, :], a[near], b[near], c[near])
    diff = pts[:, None, :] - q
    bound = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff).min(axis=1)) * (1 + 1e-9) + 1e-12

    bucket = np.floor(np.log2(np.maximum(reach, 1e-12))).astype(np.int64)
    rows, cand = [], []
    for key in np.unique(bucket):
        members = np.nonzero(bucket == key)[0]
        hits = cKDTree(cen[members]).query_ball_point(pts, bound + reach[members].max())
        counts = np.fromiter(map(len, hits), dtype=np.int64, count=len(hits))
        if counts.sum():
            rows.append(np.repeat(np.arange(len(pts)), counts))
            cand.append(members[np.concatenate(hits).astype(np.int64)])
    rows, cand = np.concatenate(rows), np.concatenate(cand)
    order = np.lexsort((cand, rows))
    indptr = np.zeros(len(pts) + 1, dtype=np.int64)
    np.cumsum(np.bincount(rows, minlength=len(pts)), out=indptr[1:])
    cand = cand[order]
    return indptr, cand


def point_to_mesh_distance(p, mesh: TriangleMesh) -> float:
    return float(points_to_mesh_distance(np.asarray(p, float).reshape(1, 3), mesh)[0])


def sample_surface_uniform(mesh: TriangleMesh, n: int, rng: np.random.Generator) -> np.ndarray:
    """Area-weighted uniform samples on the mesh surface."""
    areas = mesh.triangle_areas()
    total = areas.sum()
    if len(mesh) == 0 or total <= 0:
        raise EmptyMesh("cannot sample an empty mesh")
    tri = rng.choice(len(mesh), size=n, p=areas / total)
    r1 = np.sqrt(rng.random(n))
    r2 = rng.random(n)
    a, b, c = (x[tri] for x in mesh.corners())
    return (1 - r1)[:, None] * a + (r1 * (1 - r2))[:, None] * b + (r1 * r2)[:, None] * c
