import json
import shutil
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from scannorm import cli
from scannorm import io as sio
from scannorm.errors import EmptyCloud
from scannorm.geometry import PointCloud, RigidTransform, chamfer_distance, points_to_mesh_distance
from scannorm.isolation import KITTI, NUSCENES, isolate_frame
from scannorm.pipeline import (
    FrameInputs,
    PipelineConfig,
    derive_seed,
    eval_normalization,
    load_frame_inputs,
    mean_nn_spacing,
    run_dataset,
    run_frame,
    simulate_dataset,
)
from scannorm.sampling import SamplingParams
from scannorm.scansim import Scene, annotation_box, make_pattern, random_scene, scan, sensor_pose

H = 1.73


def car_frame(preset, x, yaw=0.4, y=1.0):
    scene = Scene()
    scene.add_car((x, y), yaw)
    ls = scan(scene, make_pattern(preset), sensor_pose(H))
    gt = scene.objects[0].world_mesh().transformed(sensor_pose(H).inverse())
    return ls, gt


def normalize(ls, preset, config, seed=1):
    cfg = replace(config, sensor=make_pattern(preset).sensor_config(), z_offset=H)
    boxes = [annotation_box(b) for b in ls.boxes]
    return run_frame(ls.cloud, FrameInputs(boxes=boxes), cfg, seed=seed)


def object_cloud(ls, sc, iid=1):
    raw = PointCloud(ls.object_points(iid) + [0, 0, H])
    norm = sc.objects[0][1] if sc.objects else raw
    return raw, norm


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("sim")
    ids = simulate_dataset(root, 4, "kitti64", seed=3)
    return root, ids


def velodyne_bytes(out):
    return {p.name: p.read_bytes() for p in sorted((out / "velodyne").iterdir())}


# ---------------------------------------------------------------- run_frame


@pytest.mark.parametrize("dz", [0.0, 1.6])
def test_no_objects_is_identity(dz):
    cloud = PointCloud(np.random.default_rng(0).normal(size=(300, 3)), np.linspace(0, 1, 300), "f")
    sc, report = run_frame(cloud, FrameInputs(boxes=[]), PipelineConfig(z_offset=dz))
    out = sc.assembled
    np.testing.assert_array_equal(out.points, cloud.points + [0, 0, dz])
    np.testing.assert_array_equal(out.intensity, cloud.intensity)
    assert report.instances == []
    assert set(report.timings_ms) == {"isolate", "complete", "sample", "total"}


def test_kitti_car_matches_truth():
    ls, gt = car_frame("kitti64", 10.0)
    sc, report = normalize(ls, "kitti64", PipelineConfig())
    (rec,) = report.instances
    assert rec["status"] == "ok" and rec["points_after"] >= rec["points_before"]
    _, norm = object_cloud(ls, sc)
    err = np.median(points_to_mesh_distance(norm.points - [0, 0, H], gt))
    assert err < 0.05


def test_kitti_vs_baraja_normalized_closer():
    # a canonical virtual scan is what makes the two patterns comparable
    cfg = PipelineConfig(sampling=SamplingParams("virtual_lidar", vl_pattern="baraja_foveated"))
    ka, _ = car_frame("kitti64", 10.0)
    kb, _ = car_frame("baraja_foveated", 10.0)
    raw_a, norm_a = object_cloud(ka, normalize(ka, "kitti64", cfg)[0])
    raw_b, norm_b = object_cloud(kb, normalize(kb, "baraja_foveated", cfg)[0])
    assert chamfer_distance(norm_a, norm_b) < chamfer_distance(raw_a, raw_b)


def test_report_fields():
    ls, _ = car_frame("nuscenes32", 30.0)
    sc, report = normalize(ls, "nuscenes32", PipelineConfig())
    (rec,) = report.instances
    assert rec["status"] == "pass_through" and "< 50" in rec["reason"]
    assert rec["points_after"] == rec["points_before"]
    assert rec["beta"] == pytest.approx(rec["d_o"] * np.tan(np.radians(1.25)) / 0.05)
    assert rec["eps"] == pytest.approx(5 * rec["d_o"] * np.tan(np.radians(1.25)))
    # pass-through keeps the raw points
    assert len(sc.objects) == 0 and len(sc.assembled) == len(ls.cloud)


def test_source_index_survives_empty_box():
    ls, _ = car_frame("kitti64", 12.0)
    empty = replace(ls.boxes[0], center=(-40.0, 0.0, 0.0))
    cfg = replace(PipelineConfig(), z_offset=H)
    sc, report = run_frame(ls.cloud, FrameInputs(boxes=[empty, annotation_box(ls.boxes[0])]), cfg)
    skipped, done = report.instances
    assert skipped["status"] == "skipped" and skipped["index"] == 0
    assert done["index"] == 0 and done["source_index"] == 1
    assert sc.objects[0][0]["source_index"] == 1


def test_keep_original_adds_samples():
    ls, _ = car_frame("kitti64", 12.0)
    sc, rep = normalize(ls, "kitti64", PipelineConfig(replace_objects=False))
    assert len(sc.background) == len(ls.cloud)
    assert len(sc.assembled) == len(ls.cloud) + rep.instances[0]["points_after"]


def test_mask_mode(dataset):
    root, ids = dataset
    cfg = PipelineConfig(mode="target_masks", z_offset=H)
    cloud = sio.read_cloud(root / "velodyne" / f"{ids[0]}.bin")
    sc, report = run_frame(cloud, load_frame_inputs(root, ids[0], cfg), cfg)
    assert report.instances and all(r["source"] == "mask" for r in report.instances)
    assert any(r["status"] == "ok" for r in report.instances)
    with pytest.raises(ValueError):
        run_frame(cloud, FrameInputs(masks=[]), cfg)


@settings(max_examples=5)
@given(st.integers(0, 1000), st.sampled_from([0.0, 1.73]))
def test_background_and_replacement(seed, dz):
    scene = random_scene(np.random.default_rng(seed), n_cars=3, x_range=(5, 25))
    ls = scan(scene, make_pattern("kitti64"), sensor_pose(H))
    boxes = [annotation_box(b) for b in ls.boxes]
    cfg = PipelineConfig(z_offset=dz)
    sc, report = run_frame(ls.cloud, FrameInputs(boxes=boxes), cfg, seed=seed)
    shifted = ls.cloud.translated((0, 0, dz))
    shifted_boxes = [replace(b, center=(b.center[0], b.center[1], b.center[2] + dz)) for b in boxes]
    iso = isolate_frame(shifted, boxes=shifted_boxes, config=replace(cfg.sensor, origin=cfg.origin),
                        params=cfg.cluster, min_points=cfg.min_points)
    replaced = np.zeros(len(shifted), bool)
    done = {o["index"] for o, _ in sc.objects}
    for k, inst in enumerate(iso.instances):
        if k in done:
            replaced[inst.indices] = True
    # background is exactly the untouched points, bit for bit and in order
    np.testing.assert_array_equal(sc.background.points, shifted.points[~replaced])
    np.testing.assert_array_equal(sc.background.intensity, shifted.intensity[~replaced])
    out = {tuple(p) for p in sc.assembled.points}
    assert not any(tuple(p) in out for p in shifted.points[replaced])
    assert len(sc.assembled) == (~replaced).sum() + sum(len(c) for _, c in sc.objects)


def test_run_frame_deterministic():
    ls, _ = car_frame("kitti64", 15.0)
    a = normalize(ls, "kitti64", PipelineConfig(), seed=5)[0].assembled.points
    b = normalize(ls, "kitti64", PipelineConfig(), seed=5)[0].assembled.points
    c = normalize(ls, "kitti64", PipelineConfig(), seed=6)[0].assembled.points
    assert np.array_equal(a, b) and not np.array_equal(a, c)


def test_derive_seed():
    assert derive_seed(1, "000001") == derive_seed(1, "000001")
    assert derive_seed(1, "000001") != derive_seed(1, "000002")
    assert derive_seed(1, "a", 2) != derive_seed(1, "a2")
    assert 0 <= derive_seed("x") < 2 ** 63


# ---------------------------------------------------------------- run_dataset


def test_empty_dataset(tmp_path):
    summary = run_dataset(tmp_path / "nothing", tmp_path / "out")
    assert summary["frames"] == 0 and summary["failed"] == []
    assert json.loads((tmp_path / "out" / "summary.json").read_text())["frames"] == 0


def test_dataset_deterministic(dataset, tmp_path):
    root, ids = dataset
    cfg = PipelineConfig(z_offset=H)
    s1 = run_dataset(root, tmp_path / "a", cfg, seed=9)
    run_dataset(root, tmp_path / "b", cfg, seed=9)
    assert s1["succeeded"] == len(ids) and s1["failed"] == []
    a, b = velodyne_bytes(tmp_path / "a"), velodyne_bytes(tmp_path / "b")
    assert list(a) == [f"{i}.bin" for i in ids]
    assert a == b
    assert sorted(p.stem for p in (tmp_path / "a" / "reports").iterdir()) == ids
    assert s1["instances"].get("ok", 0) > 0
    # workers and an idempotent rerun into the same directory change nothing
    run_dataset(root, tmp_path / "a", cfg, seed=9, workers=2)
    assert velodyne_bytes(tmp_path / "a") == b


def test_dataset_frame_order_independent(dataset, tmp_path):
    root, ids = dataset
    sub = tmp_path / "sub"
    for d in ("velodyne", "calib", "label_2"):
        (sub / d).mkdir(parents=True)
    for i in (ids[2], ids[0]):
        shutil.copy(root / "velodyne" / f"{i}.bin", sub / "velodyne")
        shutil.copy(root / "calib" / f"{i}.txt", sub / "calib")
        shutil.copy(root / "label_2" / f"{i}.txt", sub / "label_2")
    run_dataset(root, tmp_path / "full", seed=2)
    run_dataset(sub, tmp_path / "part", seed=2)
    full, part = velodyne_bytes(tmp_path / "full"), velodyne_bytes(tmp_path / "part")
    assert all(part[k] == full[k] for k in part) and len(part) == 2


def test_dataset_corrupt_frame(dataset, tmp_path):
    root, ids = dataset
    bad = tmp_path / "bad"
    shutil.copytree(root, bad)
    (bad / "velodyne" / f"{ids[1]}.bin").write_bytes(b"\0" * 17)
    summary = run_dataset(bad, tmp_path / "out")
    assert summary["succeeded"] == len(ids) - 1
    assert [f["frame_id"] for f in summary["failed"]] == [ids[1]]
    assert "MalformedFile" in summary["failed"][0]["error"]
    assert not (tmp_path / "out" / "velodyne" / f"{ids[1]}.bin").exists()


def test_dataset_ply_output(dataset, tmp_path):
    root, ids = dataset
    run_dataset(root, tmp_path / "o", out_format="ply")
    c = sio.read_cloud(tmp_path / "o" / "velodyne" / f"{ids[0]}.ply")
    assert len(c) > 1000 and c.intensity is not None


# ---------------------------------------------------------------- evaluation


def test_eval_identical_is_zero():
    c = PointCloud(np.random.default_rng(0).normal(size=(100, 3)))
    m = eval_normalization(c, c, c, c)
    assert m["raw_chamfer"] == 0 and m["normalized_chamfer"] == 0


def test_eval_empty():
    c = PointCloud(np.ones((3, 3)))
    with pytest.raises(EmptyCloud):
        eval_normalization(c, PointCloud(np.zeros((0, 3))), c, c)


def test_eval_nuscenes_vs_kitti_30m():
    cfg = PipelineConfig(min_points=20)
    ka, _ = car_frame("kitti64", 30.0)
    nb, _ = car_frame("nuscenes32", 30.0)
    sa, ra = normalize(ka, "kitti64", cfg)
    sb, rb = normalize(nb, "nuscenes32", cfg)
    assert ra.instances[0]["status"] == rb.instances[0]["status"] == "ok"
    raw_a, norm_a = object_cloud(ka, sa)
    raw_b, norm_b = object_cloud(nb, sb)
    m = eval_normalization(raw_a, raw_b, norm_a, norm_b)
    assert m["normalized_chamfer"] < m["raw_chamfer"]
    # upsampled objects land near the ideal spacing
    for name, rec in (("norm_a", ra), ("norm_b", rb)):
        assert rec.instances[0]["beta"] > 1
        assert 0.5 <= m["density"][name]["spacing_over_d_ideal"] <= 2.0


def test_eval_mesh_distances():
    ls, gt = car_frame("kitti64", 10.0)
    sc, _ = normalize(ls, "kitti64", PipelineConfig())
    raw, norm = object_cloud(ls, sc)
    gt_lifted = gt.transformed(RigidTransform.from_rt(np.eye(3), (0, 0, H)))
    m = eval_normalization(raw, raw, norm, norm, gt_lifted)
    assert m["mesh_distance"]["raw_a"]["median"] < 1e-6
    assert m["mesh_distance"]["norm_a"]["median"] < 0.05
    assert m["mesh_distance"]["norm_a"]["p95"] >= m["mesh_distance"]["norm_a"]["median"]


def test_mean_nn_spacing():
    pts = np.c_[np.arange(10) * 0.1, np.zeros(10), np.zeros(10)]
    assert mean_nn_spacing(pts) == pytest.approx(0.1)
    with pytest.raises(EmptyCloud):
        mean_nn_spacing(pts[:1])


# ---------------------------------------------------------------- config


def test_config_from_dict():
    cfg = PipelineConfig.from_dict({"sensor": "nuscenes", "d-ideal": 0.1, "strategy": "surface-area",
                                    "bpa_max_radius": 2.0, "bpa_radius_count": 4, "keep_original": True,
                                    "z_offset": 1.8, "min_points": 20})
    assert cfg.sensor == NUSCENES
    assert cfg.sampling.d_ideal == 0.1 and cfg.sampling.strategy == "surface_area"
    assert cfg.bpa.radii == (0.5, 1.0, 1.5, 2.0)
    assert not cfg.replace_objects and cfg.origin == (0, 0, 1.8) and cfg.min_points == 20
    assert PipelineConfig.from_dict({}).sensor == KITTI
    with pytest.raises(ValueError):
        PipelineConfig.from_dict({"bogus": 1})
    with pytest.raises(ValueError):
        PipelineConfig.from_dict({"sensor": "waymo"})
    with pytest.raises(ValueError):
        PipelineConfig(mode="both")


def test_config_toml(tmp_path):
    p = tmp_path / "c.toml"
    p.write_text('sensor = "nuscenes"\nalpha = 4.0\nsa_density = 700\nseed = 3\n')
    cfg = PipelineConfig.from_toml(p, {"alpha": 6.0})
    assert cfg.sensor == NUSCENES and cfg.cluster.alpha == 6.0 and cfg.sampling.sa_density == 700
    json.dumps(cfg.to_dict())


# ---------------------------------------------------------------- CLI


def test_cli_end_to_end(tmp_path, capsys):
    data, out = tmp_path / "data", tmp_path / "out"
    assert cli.main(["simulate", str(data), "--frames", "2", "--seed", "4"]) == 0
    assert cli.main(["run", str(data), str(out), "--z-offset", "1.73"]) == 0
    assert len(list((out / "velodyne").iterdir())) == 2
    (data / "velodyne" / "000001.bin").write_bytes(b"\0" * 5)
    assert cli.main(["run", str(data), str(tmp_path / "out2")]) == cli.EXIT_PARTIAL
    assert cli.main(["run", str(data), str(out), "--config", str(tmp_path / "missing.toml")]) == cli.EXIT_ERROR

    inst_dir = tmp_path / "inst"
    assert cli.main(["isolate", str(data / "velodyne" / "000000.bin"), str(inst_dir)]) == 0
    listing = json.loads((inst_dir / "000000_instances.json").read_text())
    ok = [i for i in listing["instances"] if i["status"] == "ok"]
    assert ok
    inst = inst_dir / ok[0]["file"]
    assert cli.main(["complete", str(inst), str(tmp_path / "m.ply")]) == 0
    assert cli.main(["sample", str(tmp_path / "m.ply"), str(inst), str(tmp_path / "s.ply")]) == 0
    assert len(sio.read_cloud(tmp_path / "s.ply")) >= ok[0]["points"]
    capsys.readouterr()
    assert cli.main(["eval", "--raw-a", str(inst), "--raw-b", str(inst), "--norm-a", str(tmp_path / "s.ply"),
                     "--norm-b", str(tmp_path / "s.ply"), "--output", str(tmp_path / "m.json")]) == 0
    printed = json.loads(capsys.readouterr().out)
    assert printed["raw_chamfer"] == 0 and (tmp_path / "m.json").exists()


def test_cli_scene_file(tmp_path):
    scene = tmp_path / "scene.json"
    scene.write_text(json.dumps({"pattern": "nuscenes32", "objects": [
        {"type": "car", "center": [12, 0], "yaw": 0.3},
        {"type": "box", "center": [20, 4, 1], "dims": [0.3, 0.3, 2]}]}))
    assert cli.main(["simulate", str(tmp_path / "d"), "--scene", str(scene)]) == 0
    labels = (tmp_path / "d" / "label_2" / "000000.txt").read_text().split("\n")
    assert labels[0].startswith("Car") and labels[1].startswith("Obstacle")
    assert cli.main(["run", str(tmp_path / "d"), str(tmp_path / "o"), "--sensor", "nuscenes",
                     "--mode", "target_masks"]) == 0
