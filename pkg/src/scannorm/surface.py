"""Surface completion: normal estimation, ball pivoting and alpha shapes."""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import Delaunay, cKDTree

from .errors import DegenerateNeighborhood, MeshEmpty, TooFewPoints
from .geometry import TriangleMesh
from .isolation import DEFAULT_MIN_POINTS, ObjectInstance
from .kernels.bpa import ball_pivot_triangles

BPA_MAX_RADIUS = 1.155
BPA_RADIUS_COUNT = 20
SEED_CANDIDATES = 32
MAX_PIVOT_TRIES = 4


def default_radii(upper: float = BPA_MAX_RADIUS, count: int = BPA_RADIUS_COUNT) -> tuple:
    return tuple(float(r) for r in np.linspace(upper / count, upper, count))


@dataclass(frozen=True)
class BpaParams:
    radii: tuple = field(default_factory=default_radii)
    normal_k: int = 30

    def __post_init__(self):
        radii = tuple(float(r) for r in self.radii)
        if not radii or min(radii) <= 0 or any(b <= a for a, b in zip(radii, radii[1:])):
            raise ValueError("radii must be positive and strictly ascending")
        if self.normal_k < 3:
            raise ValueError("normal_k must be >= 3")
        object.__setattr__(self, "radii", radii)


@dataclass(frozen=True)
class AlphaParams:
    alpha: float = BPA_MAX_RADIUS

    def __post_init__(self):
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")


def estimate_normals(points, sensor_origin=(0.0, 0.0, 0.0), k: int = 30,
                     return_flags: bool = False):
    """PCA normals over k nearest neighbors, flipped to face the sensor.

    Exactly collinear neighborhoods get the direction orthogonal to the line
    that points most toward the sensor, and raise a DegenerateNeighborhood
    warning.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    n = pts.shape[0]
    if n < 3:
        raise ValueError("need at least 3 points for normals")
    k = max(3, min(k, n))
    origin = np.asarray(sensor_origin, dtype=np.float64)
    _, nbr = cKDTree(pts).query(pts, k=k)
    nb = pts[nbr]
    centered = nb - nb.mean(axis=1, keepdims=True)
    cov = np.einsum("nki,nkj->nij", centered, centered) / k
    evals, evecs = np.linalg.eigh(cov)
    normals = evecs[:, :, 0].copy()

    view = origin - pts
    scale = np.maximum(evals[:, 2], 1e-300)
    collinear = evals[:, 1] <= 1e-12 * scale
    if np.any(collinear):
        line = evecs[collinear, :, 2]
        v = view[collinear]
        perp = v - np.einsum("ij,ij->i", v, line)[:, None] * line
        norm = np.linalg.norm(perp, axis=1)
        # sensor on the line itself: any orthogonal direction will do
        fallback = normals[collinear]
        perp = np.where(norm[:, None] > 1e-12, perp / np.maximum(norm, 1e-300)[:, None], fallback)
        normals[collinear] = perp
        warnings.warn(
            f"{int(collinear.sum())} collinear neighborhoods; normals are arbitrary there",
            DegenerateNeighborhood, stacklevel=2,
        )
    flip = np.einsum("ij,ij->i", normals, view) < 0
    normals[flip] *= -1
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    return (normals, collinear) if return_flags else normals


def ball_pivot(points, normals, params: BpaParams = BpaParams()) -> TriangleMesh:
    """Ball-pivoting mesh over the given oriented points.

    Every input point stays a vertex; unused points are simply unreferenced.
    """
    pts = np.ascontiguousarray(np.asarray(points, dtype=np.float64).reshape(-1, 3))
    nrm = np.ascontiguousarray(np.asarray(normals, dtype=np.float64).reshape(-1, 3))
    if pts.shape[0] < 3:
        raise MeshEmpty("ball pivoting needs at least 3 points")
    if nrm.shape != pts.shape:
        raise ValueError("one normal per point required")
    tris = ball_pivot_triangles(pts, nrm, np.asarray(params.radii, dtype=np.float64),
                                SEED_CANDIDATES, MAX_PIVOT_TRIES)
    if len(tris) == 0:
        raise MeshEmpty("no seed triangle found at any radius")
    return TriangleMesh(pts, tris, nrm, {"method": "bpa", "radii": list(params.radii)})


def alpha_shape(points, params: AlphaParams = AlphaParams()) -> TriangleMesh:
    """Boundary triangles of the 3D alpha complex.

    Tetrahedra with circumradius below alpha are kept.  A Delaunay triangle is
    in the complex if it bounds a kept tetrahedron, or if its own circumradius
    is below alpha and its smallest circumsphere is empty.  Output triangles
    are complex triangles with fewer than two kept tetrahedra on their sides,
    oriented away from the kept side (or toward +normal for dangling faces).
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if pts.shape[0] < 4:
        raise MeshEmpty("alpha shape needs at least 4 points")
    alpha = params.alpha
    centered = pts - pts.mean(axis=0)
    rank = np.linalg.matrix_rank(centered, tol=1e-9 * max(1.0, np.abs(centered).max()))
    if rank < 3:
        return _alpha_shape_2d(pts, alpha)

    dt = Delaunay(pts)
    simp = np.sort(dt.simplices, axis=1)
    radius = _tet_circumradius(pts, simp)
    kept = radius < alpha

    faces = np.concatenate([simp[:, [1, 2, 3]], simp[:, [0, 2, 3]], simp[:, [0, 1, 3]], simp[:, [0, 1, 2]]])
    opposite = np.concatenate([simp[:, 0], simp[:, 1], simp[:, 2], simp[:, 3]])
    owner_kept = np.tile(kept, 4)
    uniq, inv = np.unique(faces, axis=0, return_inverse=True)
    inv = inv.reshape(-1)
    kept_count = np.bincount(inv, weights=owner_kept.astype(float), minlength=len(uniq)).astype(int)

    a, b, c = pts[uniq[:, 0]], pts[uniq[:, 1]], pts[uniq[:, 2]]
    center, rc = _tri_circumcircle(a, b, c)
    small = rc < alpha
    attached = np.zeros(len(uniq), dtype=bool)
    cand = np.nonzero(small & (kept_count == 0))[0]
    if cand.size:
        tree = cKDTree(pts)
        for f in cand:
            near = tree.query_ball_point(center[f], rc[f] * (1 - 1e-9))
            attached[f] = any(q not in uniq[f] for q in near)
    in_complex = (kept_count > 0) | (small & ~attached)
    boundary = in_complex & (kept_count < 2)
    if not boundary.any():
        raise MeshEmpty(f"alpha complex is empty at alpha={alpha}")

    # orient each boundary face away from its kept tetrahedron
    owner_face = np.full(len(uniq), -1)
    sel = owner_kept
    owner_face[inv[sel]] = opposite[sel]
    tris = []
    for f in np.nonzero(boundary)[0]:
        i, j, k = (int(v) for v in uniq[f])
        nvec = np.cross(pts[j] - pts[i], pts[k] - pts[i])
        inner = owner_face[f]
        if inner >= 0 and np.dot(nvec, pts[inner] - pts[i]) > 0:
            j, k = k, j
        tris.append((i, j, k))
    tris = np.asarray(tris, dtype=np.int64)
    area = 0.5 * np.linalg.norm(np.cross(pts[tris[:, 1]] - pts[tris[:, 0]], pts[tris[:, 2]] - pts[tris[:, 0]]), axis=1)
    tris = tris[area > 1e-12]
    if len(tris) == 0:
        raise MeshEmpty(f"alpha complex is empty at alpha={alpha}")
    return TriangleMesh(pts, tris, None, {"method": "alpha", "alpha": alpha})


def _alpha_shape_2d(pts, alpha):
    """Alpha complex triangles of a coplanar point set (both faces of the sheet)."""
    origin = pts.mean(axis=0)
    _, _, vt = np.linalg.svd(pts - origin)
    uv = (pts - origin) @ vt[:2].T
    dt = Delaunay(uv)
    simp = dt.simplices
    _, rc = _tri_circumcircle(pts[simp[:, 0]], pts[simp[:, 1]], pts[simp[:, 2]])
    tris = simp[rc < alpha]
    if len(tris) == 0:
        raise MeshEmpty(f"alpha complex is empty at alpha={alpha}")
    return TriangleMesh(pts, tris, None, {"method": "alpha", "alpha": alpha, "planar": True})


def _tri_circumcircle(a, b, c):
    ab = b - a
    ac = c - a
    n = np.cross(ab, ac)
    nn = np.einsum("ij,ij->i", n, n)
    with np.errstate(divide="ignore", invalid="ignore"):
        off = (np.einsum("ij,ij->i", ac, ac)[:, None] * np.cross(n, ab)
               + np.einsum("ij,ij->i", ab, ab)[:, None] * np.cross(ac, n)) / (2 * nn)[:, None]
    rc = np.linalg.norm(off, axis=1)
    rc = np.where(nn > 0, rc, np.inf)
    return a + off, rc


def _tet_circumradius(pts, simp):
    p0 = pts[simp[:, 0]]
    m = pts[simp[:, 1:]] - p0[:, None, :]
    rhs = 0.5 * np.einsum("tij,tij->ti", m, m)
    det = np.linalg.det(m)
    out = np.full(len(simp), np.inf)
    ok = np.abs(det) > 1e-15
    if ok.any():
        x = np.linalg.solve(m[ok], rhs[ok][..., None])[..., 0]
        out[ok] = np.linalg.norm(x, axis=1)
    return out


METHODS = ("bpa", "alpha")


def complete_surface(instance: ObjectInstance, method: str = "bpa", params=None,
                     min_points: int = DEFAULT_MIN_POINTS,
                     sensor_origin=(0.0, 0.0, 0.0)) -> TriangleMesh:
    """Mesh an isolated object; raises TooFewPoints below ``min_points``."""
    pts = instance.points.points
    if len(pts) < min_points:
        raise TooFewPoints(f"{len(pts)} points < {min_points}")
    if method == "bpa":
        params = params or BpaParams()
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", DegenerateNeighborhood)
            normals = estimate_normals(pts, sensor_origin, params.normal_k)
        mesh = ball_pivot(pts, normals, params)
    elif method == "alpha":
        params = params or AlphaParams()
        mesh = alpha_shape(pts, params)
    else:
        raise ValueError(f"unknown surface method {method!r}")
    mesh.check()
    mesh.provenance.update({"method": method, "params": _params_dict(params),
                            "points": int(len(pts))})
    return mesh


def _params_dict(params) -> dict:
    if isinstance(params, BpaParams):
        return {"radii": list(params.radii), "normal_k": params.normal_k}
    return {"alpha": params.alpha}
