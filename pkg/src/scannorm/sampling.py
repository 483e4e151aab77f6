"""Resampling completed meshes at a controlled density."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import EmptyMesh, NoHits
from .geometry import PointCloud, TriangleMesh, sample_surface_uniform
from .isolation import ObjectInstance, SensorConfig, vertical_point_distance
from .kernels.elimination import eliminate_samples
from .scansim import SensorPattern, cast_against_meshes, make_pattern
from .spatial import NeighborIndex

STRATEGIES = ("vres", "surface_area", "virtual_lidar")
OVERSAMPLE = 5


@dataclass(frozen=True)
class SamplingParams:
    strategy: str = "vres"
    d_ideal: float = 0.05
    sa_density: float = 500.0
    beta_max: float = 50.0
    min_beta: float = 1.0
    vl_pattern: str = "kitti64"

    def __post_init__(self):
        strategy = self.strategy.replace("-", "_")
        if strategy not in STRATEGIES:
            raise ValueError(f"unknown sampling strategy {self.strategy!r}")
        object.__setattr__(self, "strategy", strategy)
        if self.d_ideal <= 0 or self.sa_density <= 0:
            raise ValueError("d_ideal and sa_density must be positive")
        if self.beta_max < 1 or self.min_beta < 1 or self.min_beta > self.beta_max:
            raise ValueError("need 1 <= min_beta <= beta_max")


def upsampling_factor(d_o: float, config: SensorConfig, params: SamplingParams = SamplingParams(),
                      clamp: bool = True) -> float:
    """Ratio of ring spacing at ``d_o`` to the ideal spacing, clamped to [1, beta_max]."""
    beta = vertical_point_distance(d_o, config) / params.d_ideal
    if clamp:
        beta = min(max(beta, params.min_beta), params.beta_max)
    return beta


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def vres_target_count(beta: float, n_points: int) -> int:
    """Upsample-only target: never fewer points than the instance had."""
    return max(n_points, round_half_up(beta * n_points))


def poisson_disk_sample(mesh: TriangleMesh, n_target: int, seed: int = 0) -> PointCloud:
    """Blue-noise samples on the mesh by weighted sample elimination.

    Draws ``5 * n_target`` area-uniform samples and eliminates down to
    exactly ``n_target``.
    """
    if len(mesh) == 0:
        raise EmptyMesh("cannot sample an empty mesh")
    if n_target < 1:
        raise ValueError("n_target must be >= 1")
    area = mesh.area()
    rng = np.random.default_rng(seed)
    cand = sample_surface_uniform(mesh, OVERSAMPLE * n_target, rng)
    r_max = math.sqrt(area / (2.0 * math.sqrt(3.0) * n_target))
    two_r = 2.0 * r_max
    if two_r <= 0:
        return PointCloud(cand[:n_target])
    indptr, indices, dist = _neighbors_without_self(cand, two_r)
    keep = eliminate_samples(indptr, indices, dist, two_r, n_target)
    return PointCloud(cand[keep])


def _neighbors_without_self(points, r):
    indptr, indices, dist = NeighborIndex(points).radius_graph(r)
    rows = np.repeat(np.arange(len(points)), np.diff(indptr))
    keep = indices != rows
    new_ptr = np.zeros_like(indptr)
    np.cumsum(np.bincount(rows[keep], minlength=len(points)), out=new_ptr[1:])
    return new_ptr, np.ascontiguousarray(indices[keep]), np.ascontiguousarray(dist[keep])


def raycast_sample(mesh: TriangleMesh, pattern: SensorPattern, sensor_origin=(0.0, 0.0, 0.0),
                   ) -> PointCloud:
    """Scan the mesh alone with ``pattern`` from ``sensor_origin`` (nearest hits)."""
    if len(mesh) == 0:
        raise EmptyMesh("cannot scan an empty mesh")
    origin = np.asarray(sensor_origin, dtype=np.float64)
    dirs = pattern.directions()
    t, owner = cast_against_meshes(origin, dirs, [mesh], pattern.max_range)
    hit = owner >= 0
    if not hit.any():
        raise NoHits("no pattern ray hits the mesh")
    return PointCloud(origin + dirs[hit] * t[hit, None])


def target_count(mesh: TriangleMesh, instance: ObjectInstance, config: SensorConfig,
                 params: SamplingParams) -> int:
    if params.strategy == "vres":
        beta = upsampling_factor(instance.origin_distance, config, params)
        return vres_target_count(beta, len(instance.points))
    if params.strategy == "surface_area":
        return max(1, round_half_up(params.sa_density * mesh.area()))
    raise ValueError("virtual lidar has no target count")


def sample_semi_canonical(mesh: TriangleMesh, instance: ObjectInstance, config: SensorConfig,
                          params: SamplingParams = SamplingParams(), seed: int = 0,
                          pattern: SensorPattern | None = None) -> PointCloud:
    """Resample one completed object according to the configured strategy.

    Sampled points carry the instance's mean intensity.
    """
    if params.strategy == "virtual_lidar":
        pattern = pattern or make_pattern(params.vl_pattern)
        out = raycast_sample(mesh, pattern, config.origin)
    else:
        out = poisson_disk_sample(mesh, target_count(mesh, instance, config, params), seed)
    inten = instance.points.intensity
    fill = float(np.mean(inten)) if inten is not None and len(inten) else 0.0
    return PointCloud(out.points, np.full(len(out), fill), instance.points.frame_id)
