import numpy as np
import pytest

from mvrecon.errors import IoFailure, MissingFile
from mvrecon.fileio import (
    read_depth_raster,
    read_mesh_ply,
    read_point_cloud_ply,
    write_depth_raster,
    write_mesh_obj,
    write_mesh_ply,
    write_point_cloud_ply,
)


def test_depth_raster_round_trip(tmp_path, rng):
    depth = rng.uniform(0.5, 5.0, size=(12, 17))
    depth[0, 0] = np.nan
    path = tmp_path / "a.png.depth.f32"
    write_depth_raster(path, depth, "metric", {"note": "test"})
    back, meta = read_depth_raster(path)
    assert meta["width"] == 17 and meta["height"] == 12
    assert meta["scale_domain"] == "metric"
    assert meta["note"] == "test"
    assert np.isnan(back[0, 0])
    assert np.array_equal(back[1:], depth[1:].astype(np.float32).astype(np.float64))


def test_depth_raster_errors(tmp_path):
    with pytest.raises(MissingFile):
        read_depth_raster(tmp_path / "missing.f32")
    path = tmp_path / "bad.depth.f32"
    write_depth_raster(path, np.ones((2, 2)))
    path.write_bytes(b"\x00" * 7)  # truncated payload
    with pytest.raises(IoFailure):
        read_depth_raster(path)


def test_mesh_ply_round_trip(tmp_path, rng):
    verts = rng.normal(size=(20, 3)).astype(np.float32).astype(np.float64)
    tris = rng.integers(0, 20, size=(30, 3)).astype(np.int64)
    write_mesh_ply(tmp_path / "m.ply", verts, tris)
    v, t = read_mesh_ply(tmp_path / "m.ply")
    assert np.array_equal(v, verts)
    assert np.array_equal(t, tris)


def test_point_cloud_ply_round_trip(tmp_path, rng):
    pts = rng.normal(size=(15, 3)).astype(np.float32).astype(np.float64)
    sup = rng.integers(0, 9, size=15)
    write_point_cloud_ply(tmp_path / "c.ply", pts, sup)
    p, s = read_point_cloud_ply(tmp_path / "c.ply")
    assert np.array_equal(p, pts)
    assert np.array_equal(s, sup)


def test_obj_export_format(tmp_path):
    verts = np.array([[0.0, 0, 0], [1.0, 0, 0], [0.0, 1, 0]])
    tris = np.array([[0, 1, 2]])
    write_mesh_obj(tmp_path / "m.obj", verts, tris)
    text = (tmp_path / "m.obj").read_text().splitlines()
    assert text[0].startswith("v ")
    assert text[-1] == "f 1 2 3"  # 1-based indices


def test_ply_writes_are_deterministic(tmp_path, rng):
    verts = rng.normal(size=(10, 3))
    tris = rng.integers(0, 10, size=(12, 3))
    write_mesh_ply(tmp_path / "a.ply", verts, tris)
    write_mesh_ply(tmp_path / "b.ply", verts, tris)
    assert (tmp_path / "a.ply").read_bytes() == (tmp_path / "b.ply").read_bytes()
