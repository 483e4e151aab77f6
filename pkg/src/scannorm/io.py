"""Readers and writers: KITTI velodyne/calib/labels, PLY, PNG masks + manifest."""
from __future__ import annotations

import json
import math
import os
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import ManifestMissing, MalformedFile, MissingMatrix, SizeMismatch
from .geometry import BoundingBox3, PointCloud, RigidTransform, TriangleMesh, wrap_angle
from .isolation import Calibration, InstanceMask

KITTI_IMAGE_SIZE = (1242, 375)


# ------------------------------------------------------------------ velodyne

def read_kitti_bin(path) -> PointCloud:
    path = Path(path)
    size = path.stat().st_size
    if size % 16:
        raise MalformedFile(f"{path}: size {size} is not a multiple of 16 bytes")
    data = np.fromfile(path, dtype="<f4").reshape(-1, 4)
    if not np.all(np.isfinite(data[:, :3])):
        raise MalformedFile(f"{path}: non-finite coordinates")
    return PointCloud(data[:, :3].astype(np.float64), data[:, 3].astype(np.float64), path.stem)


def write_kitti_bin(path, cloud: PointCloud) -> None:
    inten = cloud.intensity if cloud.intensity is not None else np.zeros(len(cloud))
    out = np.empty((len(cloud), 4), dtype="<f4")
    out[:, :3] = cloud.points
    out[:, 3] = inten
    _atomic_write(path, out.tobytes())


def _atomic_write(path, payload: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as f:
        f.write(payload)
    os.replace(tmp, path)


# --------------------------------------------------------------------- calib

def _parse_matrices(path) -> dict:
    mats = {}
    with open(path) as f:
        for lineno, line in enumerate(f, 1):
            line = line.strip()
            if not line:
                continue
            if ":" not in line:
                raise MalformedFile(f"{path}:{lineno}: expected 'NAME: values'")
            name, vals = line.split(":", 1)
            try:
                mats[name.strip()] = np.array([float(v) for v in vals.split()])
            except ValueError as exc:
                raise MalformedFile(f"{path}:{lineno}: {exc}") from None
    return mats


def _nearest_rotation(r: np.ndarray) -> np.ndarray:
    u, _, vt = np.linalg.svd(r)
    d = np.sign(np.linalg.det(u @ vt))
    return u @ np.diag([1.0, 1.0, d]) @ vt


def _need(mats, name, size, path):
    if name not in mats:
        raise MissingMatrix(f"{path}: missing {name}")
    if mats[name].size != size:
        raise MalformedFile(f"{path}: {name} has {mats[name].size} values, expected {size}")
    return mats[name]


def read_kitti_calib(path, image_size=KITTI_IMAGE_SIZE, camera: str = "P2") -> Calibration:
    """Calibration for one KITTI camera.

    The extrinsic maps lidar points into that camera's frame; the camera's
    baseline (4th column of its projection matrix) is folded into it.  The
    rectified reference frame used by label files is kept as
    ``label_from_lidar``.
    """
    mats = _parse_matrices(path)
    p = _need(mats, camera, 12, path).reshape(3, 4)
    r0 = _need(mats, "R0_rect", 9, path).reshape(3, 3)
    tr = _need(mats, "Tr_velo_to_cam", 12, path).reshape(3, 4)
    k = p[:, :3]
    if k[0, 0] <= 0 or k[1, 1] <= 0:
        raise MalformedFile(f"{path}: {camera} has non-positive focal length")
    rect = RigidTransform.from_rt(_nearest_rotation(r0), np.zeros(3))
    velo = RigidTransform.from_rt(_nearest_rotation(tr[:, :3]), tr[:, 3])
    label_from_lidar = rect @ velo
    baseline = np.linalg.solve(k, p[:, 3])
    extrinsic = RigidTransform.from_rt(np.eye(3), baseline) @ label_from_lidar
    return Calibration(extrinsic, k, tuple(image_size), label_from_lidar)


def write_kitti_calib(path, calib: Calibration) -> None:
    k = calib.intrinsic
    label = calib.label_frame()
    # extrinsic = [I | b] @ label_from_lidar, so b is the camera baseline
    b = (calib.extrinsic @ label.inverse()).translation
    p2 = np.c_[k, k @ b]
    p0 = np.c_[k, np.zeros(3)]
    tr = label.matrix[:3, :]

    def fmt(a):
        return " ".join(f"{v:.12e}" for v in np.asarray(a).reshape(-1))

    lines = [f"P0: {fmt(p0)}", f"P1: {fmt(p0)}", f"P2: {fmt(p2)}", f"P3: {fmt(p2)}",
             f"R0_rect: {fmt(np.eye(3))}", f"Tr_velo_to_cam: {fmt(tr)}",
             f"Tr_imu_to_velo: {fmt(np.eye(4)[:3])}"]
    _atomic_write(path, ("\n".join(lines) + "\n").encode())


# -------------------------------------------------------------------- labels

def read_kitti_labels(path, calib: Calibration, classes=("Car",)) -> list:
    """Boxes of the requested classes, converted to the lidar frame.

    Returns a list of ``(class_name, BoundingBox3)``.  ``DontCare`` and other
    unlisted classes are skipped.
    """
    to_lidar = calib.label_frame().inverse()
    out = []
    with open(path) as f:
        for lineno, line in enumerate(f, 1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) < 15:
                raise MalformedFile(f"{path}:{lineno}: expected at least 15 fields")
            cls = parts[0]
            if cls == "DontCare" or (classes is not None and cls not in classes):
                continue
            try:
                h, w, l, x, y, z, ry = (float(v) for v in parts[8:15])
            except ValueError as exc:
                raise MalformedFile(f"{path}:{lineno}: {exc}") from None
            # location is the bottom-face center; camera y points down
            center = to_lidar.apply(np.array([[x, y - h / 2.0, z]]))[0]
            heading = to_lidar.rotation @ np.array([math.cos(ry), 0.0, -math.sin(ry)])
            yaw = math.atan2(heading[1], heading[0])
            out.append((cls, BoundingBox3(tuple(center), (l, w, h), yaw)))
    return out


def write_kitti_labels(path, boxes, calib: Calibration, classes=None) -> None:
    """Inverse of ``read_kitti_labels``; ``boxes`` are lidar-frame boxes."""
    from .isolation import project_to_image

    to_cam = calib.label_frame()
    lines = []
    for k, box in enumerate(boxes):
        cls = classes[k] if classes is not None else "Car"
        l, w, h = box.dims
        c = to_cam.apply(np.asarray(box.center)[None])[0]
        x, y, z = c[0], c[1] + h / 2.0, c[2]
        d = to_cam.rotation @ np.array([math.cos(box.yaw), math.sin(box.yaw), 0.0])
        ry = wrap_angle(math.atan2(-d[2], d[0]))
        alpha = wrap_angle(ry - math.atan2(x, z))
        corners = box_corners(box)
        proj = project_to_image(PointCloud(corners), calib)
        if proj.index.size:
            bb = (proj.u.min(), proj.v.min(), proj.u.max(), proj.v.max())
        else:
            bb = (0.0, 0.0, 0.0, 0.0)
        lines.append(
            f"{cls} 0.00 0 {alpha:.6f} {bb[0]:.2f} {bb[1]:.2f} {bb[2]:.2f} {bb[3]:.2f} "
            f"{h:.6f} {w:.6f} {l:.6f} {x:.6f} {y:.6f} {z:.6f} {ry:.6f}"
        )
    _atomic_write(path, ("\n".join(lines) + ("\n" if lines else "")).encode())


def box_corners(box: BoundingBox3) -> np.ndarray:
    l, w, h = box.dims
    sx, sy, sz = np.meshgrid([-0.5, 0.5], [-0.5, 0.5], [-0.5, 0.5], indexing="ij")
    local = np.stack([sx.ravel() * l, sy.ravel() * w, sz.ravel() * h], axis=1)
    return box.pose().apply(local)


# --------------------------------------------------------------------- masks

def read_masks(mask_dir, frame_id: str, image_size=None, classes=("Car",),
               min_score: float = 0.5) -> list:
    """Masks listed in ``<mask_dir>/<frame_id>.json``.

    The manifest is a list (or ``{"masks": [...]}``) of entries with
    ``png_path`` (relative to ``mask_dir``), ``class`` and ``score``.
    """
    mask_dir = Path(mask_dir)
    manifest = mask_dir / f"{frame_id}.json"
    if not manifest.exists():
        raise ManifestMissing(str(manifest))
    with open(manifest) as f:
        try:
            data = json.load(f)
        except json.JSONDecodeError as exc:
            raise MalformedFile(f"{manifest}: {exc}") from None
    entries = data.get("masks", []) if isinstance(data, dict) else data
    out = []
    for entry in entries:
        cls = entry.get("class", "Car")
        score = float(entry.get("score", 1.0))
        if classes is not None and cls not in classes:
            continue
        if score < min_score:
            continue
        img = np.asarray(Image.open(mask_dir / entry["png_path"]))
        if img.ndim != 2:
            raise MalformedFile(f"{entry['png_path']}: expected a single-channel PNG")
        if image_size is not None and (img.shape[1], img.shape[0]) != tuple(image_size):
            raise SizeMismatch(
                f"{entry['png_path']}: {img.shape[1]}x{img.shape[0]} != {image_size[0]}x{image_size[1]}"
            )
        out.append(InstanceMask(img != 0, cls, score, int(entry.get("instance_id", 0))))
    return out


def write_masks(mask_dir, frame_id: str, masks) -> None:
    mask_dir = Path(mask_dir)
    mask_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for k, m in enumerate(masks):
        name = f"{frame_id}_{k}.png"
        Image.fromarray(m.raster.astype(np.uint8) * 255).save(mask_dir / name)
        entries.append({"png_path": name, "class": m.class_label, "score": m.score,
                        "instance_id": m.instance_id})
    _atomic_write(mask_dir / f"{frame_id}.json", json.dumps(entries, indent=1).encode())


# ----------------------------------------------------------------------- PLY

_PLY_TYPES = {
    "char": "i1", "int8": "i1", "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2", "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4", "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4", "double": "f8", "float64": "f8",
}


def write_ply(path, points, intensity=None, triangles=None, normals=None, binary: bool = True) -> None:
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    n = pts.shape[0]
    cols = [("x", pts[:, 0]), ("y", pts[:, 1]), ("z", pts[:, 2])]
    if normals is not None:
        nrm = np.asarray(normals, dtype=np.float64).reshape(-1, 3)
        cols += [("nx", nrm[:, 0]), ("ny", nrm[:, 1]), ("nz", nrm[:, 2])]
    if intensity is not None:
        cols.append(("intensity", np.asarray(intensity, dtype=np.float64).reshape(-1)))
    tris = None if triangles is None else np.asarray(triangles, dtype=np.int64).reshape(-1, 3)

    fmt = "binary_little_endian" if binary else "ascii"
    header = ["ply", f"format {fmt} 1.0", f"element vertex {n}"]
    header += [f"property double {name}" for name, _ in cols]
    if tris is not None:
        header += [f"element face {len(tris)}", "property list uchar int vertex_indices"]
    header.append("end_header")
    head = ("\n".join(header) + "\n").encode("ascii")

    if binary:
        vdt = np.dtype([(name, "<f8") for name, _ in cols])
        verts = np.empty(n, dtype=vdt)
        for name, col in cols:
            verts[name] = col
        body = verts.tobytes()
        if tris is not None:
            fdt = np.dtype([("n", "u1"), ("v", "<i4", (3,))])
            faces = np.empty(len(tris), dtype=fdt)
            faces["n"] = 3
            faces["v"] = tris
            body += faces.tobytes()
    else:
        rows = np.stack([c for _, c in cols], axis=1) if n else np.zeros((0, len(cols)))
        lines = [" ".join(repr(float(v)) for v in row) for row in rows]
        if tris is not None:
            lines += [f"3 {a} {b} {c}" for a, b, c in tris]
        body = ("\n".join(lines) + ("\n" if lines else "")).encode("ascii")
    _atomic_write(path, head + body)


def read_ply(path) -> dict:
    """Vertices (and faces if present) of a PLY file.

    Returns a dict with ``points`` and, when present, ``intensity``,
    ``normals`` and ``triangles``.
    """
    try:
        return _read_ply(path)
    except MalformedFile:
        raise
    except (ValueError, IndexError, UnicodeDecodeError) as exc:
        raise MalformedFile(f"{path}: {exc}") from None


def _read_ply(path) -> dict:
    with open(path, "rb") as f:
        if f.readline().strip() != b"ply":
            raise MalformedFile(f"{path}: not a PLY file")
        fmt, elements = None, []
        while True:
            line = f.readline()
            if not line:
                raise MalformedFile(f"{path}: missing end_header")
            tok = line.decode("ascii", "replace").split()
            if not tok or tok[0] in ("comment", "obj_info"):
                continue
            if tok[0] == "format":
                fmt = tok[1]
            elif tok[0] == "element":
                elements.append({"name": tok[1], "count": int(tok[2]), "props": []})
            elif tok[0] == "property":
                if tok[1] == "list":
                    elements[-1]["props"].append((tok[4], "list", _ply_type(tok[2], path), _ply_type(tok[3], path)))
                else:
                    elements[-1]["props"].append((tok[2], _ply_type(tok[1], path)))
            elif tok[0] == "end_header":
                break
        if fmt not in ("ascii", "binary_little_endian", "binary_big_endian"):
            raise MalformedFile(f"{path}: unsupported format {fmt}")
        data = {}
        if fmt == "ascii":
            rest = f.read().decode("ascii").split()
            pos = 0
            for el in elements:
                rows = []
                for _ in range(el["count"]):
                    row = {}
                    for prop in el["props"]:
                        if prop[1] == "list":
                            cnt = int(rest[pos])
                            row[prop[0]] = [float(v) for v in rest[pos + 1 : pos + 1 + cnt]]
                            pos += 1 + cnt
                        else:
                            row[prop[0]] = float(rest[pos])
                            pos += 1
                    rows.append(row)
                data[el["name"]] = rows
        else:
            endian = "<" if fmt == "binary_little_endian" else ">"
            for el in elements:
                if all(p[1] != "list" for p in el["props"]):
                    dt = np.dtype([(p[0], endian + p[1]) for p in el["props"]])
                    buf = f.read(dt.itemsize * el["count"])
                    if len(buf) != dt.itemsize * el["count"]:
                        raise MalformedFile(f"{path}: truncated {el['name']} data")
                    data[el["name"]] = np.frombuffer(buf, dtype=dt)
                else:
                    rows = []
                    for _ in range(el["count"]):
                        row = {}
                        for prop in el["props"]:
                            if prop[1] == "list":
                                cdt = np.dtype(endian + prop[2])
                                cnt = int(np.frombuffer(f.read(cdt.itemsize), cdt)[0])
                                vdt = np.dtype(endian + prop[3])
                                row[prop[0]] = np.frombuffer(f.read(vdt.itemsize * cnt), vdt).tolist()
                            else:
                                vdt = np.dtype(endian + prop[1])
                                row[prop[0]] = np.frombuffer(f.read(vdt.itemsize), vdt)[0]
                        rows.append(row)
                    data[el["name"]] = rows
    return _ply_result(data, path)


def _ply_type(name, path):
    if name not in _PLY_TYPES:
        raise MalformedFile(f"{path}: unknown PLY type {name}")
    return _PLY_TYPES[name]


def _column(v, name):
    if isinstance(v, np.ndarray):
        return v[name].astype(np.float64)
    return np.array([row[name] for row in v], dtype=np.float64)


def _ply_result(data, path) -> dict:
    if "vertex" not in data:
        raise MalformedFile(f"{path}: no vertex element")
    v = data["vertex"]
    names = v.dtype.names if isinstance(v, np.ndarray) else (tuple(v[0].keys()) if v else ("x", "y", "z"))
    if len(v) == 0:
        pts = np.zeros((0, 3))
    else:
        pts = np.stack([_column(v, k) for k in ("x", "y", "z")], axis=1)
    out = {"points": pts}
    if len(v) and "intensity" in names:
        out["intensity"] = _column(v, "intensity")
    if len(v) and "nx" in names:
        out["normals"] = np.stack([_column(v, k) for k in ("nx", "ny", "nz")], axis=1)
    if "face" in data:
        faces = data["face"]
        tris = [row.get("vertex_indices", row.get("vertex_index")) for row in faces]
        if any(len(t) != 3 for t in tris):
            raise MalformedFile(f"{path}: only triangular faces are supported")
        out["triangles"] = np.asarray(tris, dtype=np.int64).reshape(-1, 3)
    return out


def read_cloud(path) -> PointCloud:
    path = Path(path)
    if path.suffix == ".bin":
        return read_kitti_bin(path)
    d = read_ply(path)
    return PointCloud(d["points"], d.get("intensity"), path.stem)


def write_cloud(path, cloud: PointCloud, binary: bool = True) -> None:
    path = Path(path)
    if path.suffix == ".bin":
        write_kitti_bin(path, cloud)
    else:
        write_ply(path, cloud.points, cloud.intensity, binary=binary)


def read_mesh(path) -> TriangleMesh:
    d = read_ply(path)
    return TriangleMesh(d["points"], d.get("triangles", np.zeros((0, 3), np.int64)), d.get("normals"))


def write_mesh(path, mesh: TriangleMesh, binary: bool = True) -> None:
    write_ply(path, mesh.vertices, triangles=mesh.triangles, normals=mesh.normals, binary=binary)


def write_json(path, obj) -> None:
    _atomic_write(path, (json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n").encode())


def _json_default(o):
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not JSON serializable: {type(o).__name__}")
