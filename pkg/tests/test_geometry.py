import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import mesh_dist_brute
from scannorm.errors import EmptyCloud, EmptyMesh
from scannorm.geometry import (
    BoundingBox3,
    PointCloud,
    RigidTransform,
    TriangleMesh,
    chamfer_distance,
    crop_by_box,
    point_to_mesh_distance,
    points_to_mesh_distance,
    rot_z,
    sample_surface_uniform,
    wrap_angle,
)
from scannorm.scansim import car_proxy


def test_point_cloud_rejects_nan():
    with pytest.raises(ValueError):
        PointCloud([[0, 0, np.nan]])


def test_point_cloud_intensity_length():
    with pytest.raises(ValueError):
        PointCloud(np.zeros((3, 3)), intensity=[0.1, 0.2])


def test_concatenate_fills_missing_intensity():
    a = PointCloud(np.zeros((2, 3)), [0.5, 0.5])
    b = PointCloud(np.ones((1, 3)))
    c = PointCloud.concatenate([a, b])
    assert len(c) == 3
    np.testing.assert_array_equal(c.intensity, [0.5, 0.5, 0.0])


@pytest.mark.parametrize("angle, expected", [
    (0.0, 0.0), (math.pi, math.pi), (-math.pi, math.pi), (3 * math.pi, math.pi),
    (2 * math.pi, 0.0), (-0.5, -0.5),
])
def test_wrap_angle(angle, expected):
    assert wrap_angle(angle) == pytest.approx(expected, abs=1e-12)


def test_box_dims_must_be_positive():
    with pytest.raises(ValueError):
        BoundingBox3((0, 0, 0), (1, 0, 1))


def test_crop_interior_point_kept():
    box = BoundingBox3((0, 0, 0), (1, 1, 1), 0.0)
    assert len(crop_by_box(PointCloud([[0.4, 0, 0]]), box)) == 1


def test_crop_rotated_box():
    # with yaw pi/2 the length axis lies along y
    box = BoundingBox3((0, 0, 0), (1, 0.2, 1), math.pi / 2)
    assert len(crop_by_box(PointCloud([[0, 0.49, 0]]), box)) == 1
    assert len(crop_by_box(PointCloud([[0.49, 0, 0]]), box)) == 0


@pytest.mark.parametrize("yaw", [0.0, 0.3, -2.0])
def test_crop_excludes_point_one_length_away(yaw):
    box = BoundingBox3((1, 2, 3), (2.0, 1.0, 1.0), yaw)
    p = np.asarray(box.center) + [box.dims[0], 0, 0]
    assert not box.contains(p[None])[0]


def test_crop_face_is_inclusive():
    box = BoundingBox3((0, 0, 0), (2, 2, 2), 0.0)
    pts = np.array([[1, 0, 0], [0, -1, 0], [1, 1, 1], [1 + 1e-12, 0, 0]])
    assert box.contains(pts).tolist() == [True, True, True, False]


def test_crop_preserves_order(rng):
    pts = rng.uniform(-1, 1, (200, 3))
    box = BoundingBox3((0, 0, 0), (1, 1, 1), 0.4)
    out = crop_by_box(PointCloud(pts), box)
    expected = [p for p in pts if box.contains(p[None])[0]]
    np.testing.assert_array_equal(out.points, np.array(expected).reshape(-1, 3))


@given(st.floats(-math.pi, math.pi), st.integers(0, 10_000))
def test_crop_yaw_equivariance(theta, seed):
    rng = np.random.default_rng(seed)
    pts = rng.uniform(-3, 3, (300, 3))
    box = BoundingBox3(tuple(rng.uniform(-1, 1, 3)), tuple(rng.uniform(0.5, 3, 3)), rng.uniform(-3, 3))
    r = rot_z(theta)
    c = r @ np.asarray(box.center)
    moved = BoundingBox3(tuple(c), box.dims, box.yaw + theta)
    a = np.nonzero(box.contains(pts))[0]
    b = np.nonzero(moved.contains(pts @ r.T))[0]
    # points within rounding distance of a face may flip; compare away from faces
    local = np.abs(box.to_box_frame(pts)) - np.asarray(box.dims) / 2
    safe = np.all(np.abs(local) > 1e-9, axis=1)
    assert set(a[safe[a]]) == set(b[safe[b]])


def test_rigid_transform_validation():
    m = np.eye(4)
    m[0, 0] = 2.0
    with pytest.raises(ValueError):
        RigidTransform(m)
    m = np.eye(4)
    m[3, 0] = 1.0
    with pytest.raises(ValueError):
        RigidTransform(m)


@given(st.floats(-math.pi, math.pi), st.floats(-1, 1), st.floats(-1, 1), st.integers(0, 1000))
def test_transform_roundtrip(yaw, tilt, tx, seed):
    rng = np.random.default_rng(seed)
    rx = np.array([[1, 0, 0], [0, math.cos(tilt), -math.sin(tilt)], [0, math.sin(tilt), math.cos(tilt)]])
    tf = RigidTransform.from_rt(rot_z(yaw) @ rx, (tx, 2.0, -3.0))
    pts = rng.uniform(-50, 50, (50, 3))
    back = tf.inverse().apply(tf.apply(pts))
    assert np.max(np.abs(back - pts)) < 1e-9
    np.testing.assert_allclose((tf @ tf.inverse()).matrix, np.eye(4), atol=1e-12)


def test_chamfer_examples():
    a = PointCloud([[0, 0, 0]])
    b = PointCloud([[1, 0, 0]])
    assert chamfer_distance(a, b) == 1.0
    assert chamfer_distance(a, a) == 0.0
    with pytest.raises(EmptyCloud):
        chamfer_distance(a, PointCloud(np.zeros((0, 3))))


def _chamfer_brute(a, b):
    d = np.linalg.norm(a[:, None, :] - b[None, :, :], axis=2)
    return 0.5 * d.min(axis=1).mean() + 0.5 * d.min(axis=0).mean()


@given(st.integers(0, 10_000), st.integers(1, 40), st.integers(1, 40))
def test_chamfer_matches_brute_force(seed, na, nb):
    rng = np.random.default_rng(seed)
    a, b = rng.normal(size=(na, 3)), rng.normal(size=(nb, 3))
    got = chamfer_distance(PointCloud(a), PointCloud(b))
    assert got == pytest.approx(_chamfer_brute(a, b), rel=1e-12, abs=1e-15)
    assert got == chamfer_distance(PointCloud(b), PointCloud(a))


def test_point_to_mesh_examples():
    mesh = TriangleMesh([[-10, -10, 0], [10, -10, 0], [0, 10, 0]], [[0, 1, 2]])
    centroid = mesh.vertices.mean(axis=0)
    assert point_to_mesh_distance(mesh.vertices[1], mesh) == 0.0
    assert point_to_mesh_distance(centroid + [0, 0, 0.5], mesh) == pytest.approx(0.5, abs=1e-12)
    with pytest.raises(EmptyMesh):
        point_to_mesh_distance([0, 0, 0], TriangleMesh(np.zeros((3, 3)), np.zeros((0, 3))))


def _random_mesh(rng, n_tri=50):
    v = rng.normal(size=(n_tri * 3, 3))
    return TriangleMesh(v, np.arange(n_tri * 3).reshape(-1, 3))


@given(st.integers(0, 10_000))
def test_point_to_mesh_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    mesh = _random_mesh(rng)
    pts = rng.normal(scale=2.0, size=(10, 3))
    got = points_to_mesh_distance(pts, mesh)
    want = [mesh_dist_brute(p, mesh) for p in pts]
    np.testing.assert_allclose(got, want, rtol=1e-9, atol=1e-12)


@given(st.integers(0, 10_000))
def test_pruned_mesh_distance_matches_brute_force(seed):
    import scannorm.geometry as geometry

    rng = np.random.default_rng(seed)
    # triangles of very different sizes, so the pruning has to respect the long ones
    centers = rng.uniform(-3, 3, size=(80, 1, 3))
    v = (centers + rng.normal(size=(80, 3, 3)) * rng.lognormal(-2, 1.5, size=(80, 1, 1))).reshape(-1, 3)
    mesh = TriangleMesh(v, np.arange(240).reshape(-1, 3))
    pts = np.r_[rng.normal(scale=2.0, size=(30, 3)), rng.uniform(-50, 50, size=(5, 3)), v[:5]]
    with pytest.MonkeyPatch.context() as mp:
        mp.setattr(geometry, "BRUTE_PAIRS", 0)
        got = points_to_mesh_distance(pts, mesh)
    want = [mesh_dist_brute(p, mesh) for p in pts]
    np.testing.assert_allclose(got, want, rtol=1e-9, atol=1e-12)


def test_mesh_invariants():
    with pytest.raises(ValueError):
        TriangleMesh(np.zeros((3, 3)), [[0, 1, 3]])
    flat = TriangleMesh([[0, 0, 0], [1, 0, 0], [2, 0, 0]], [[0, 1, 2]])
    with pytest.raises(ValueError):
        flat.check()


def test_edge_valence_of_closed_car():
    mesh = car_proxy()
    assert set(mesh.edge_valence().values()) == {2}


def test_uniform_surface_samples_lie_on_mesh(rng):
    mesh = car_proxy()
    pts = sample_surface_uniform(mesh, 500, rng)
    assert points_to_mesh_distance(pts, mesh).max() < 1e-9
