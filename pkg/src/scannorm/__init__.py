"""Scan-pattern normalization of lidar objects.

Objects are isolated from a frame, meshed, and resampled at a density that
does not depend on the lidar that captured them.
"""
from .errors import ScanNormError
from .geometry import (
    BoundingBox3,
    PointCloud,
    RigidTransform,
    TriangleMesh,
    chamfer_distance,
    crop_by_box,
    point_to_mesh_distance,
    points_to_mesh_distance,
)
from .isolation import (
    KITTI,
    NUSCENES,
    Calibration,
    ClusterParams,
    InstanceMask,
    ObjectInstance,
    SensorConfig,
    cluster_eps,
    dbscan,
    isolate_frame,
    mask_isolate,
    vertical_point_distance,
    vres,
    vres_cluster,
)
from .pipeline import FrameInputs, FrameReport, PipelineConfig, SemiCanonicalCloud, eval_normalization, run_dataset, run_frame
from .sampling import SamplingParams, poisson_disk_sample, sample_semi_canonical, upsampling_factor
from .scansim import LabeledScan, Scene, SensorPattern, car_proxy, make_pattern, render_masks, scan
from .surface import AlphaParams, BpaParams, alpha_shape, ball_pivot, complete_surface, estimate_normals

__version__ = "0.1.0"
