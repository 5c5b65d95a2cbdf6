"""On-disk interchange formats: raw float32 depth rasters, PLY and OBJ geometry.

Depth rasters are headerless little-endian float32, row-major, with a JSON
sidecar carrying the dimensions and scale domain. Invalid pixels are encoded
as NaN in dense maps and as 0 in sparse maps (sparse depths are strictly
positive, so 0 is unambiguous).
"""

import json
import struct
from pathlib import Path

import numpy as np

from .errors import IoFailure, MissingFile


def write_depth_raster(
    path: Path,
    depth: np.ndarray,
    scale_domain: str = "metric",
    extra_meta: dict | None = None,
) -> None:
    """Write a depth map as <path>.f32 plus a <stem>.meta.json sidecar.

    Args:
        path: Output path ending in ".f32"; the sidecar replaces that
            suffix with ".meta.json".
        depth: (H, W) array, written as little-endian float32.
        scale_domain: "metric" or "normalized", recorded in the sidecar.
        extra_meta: Additional sidecar fields.
    """
    path = Path(path)
    arr = np.ascontiguousarray(depth, dtype="<f4")
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(arr.tobytes())
    meta = {
        "width": int(arr.shape[1]),
        "height": int(arr.shape[0]),
        "scale_domain": scale_domain,
        "dtype": "float32-le",
    }
    if extra_meta:
        meta.update(extra_meta)
    meta_path(path).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def meta_path(raster_path: Path) -> Path:
    name = Path(raster_path).name
    for suffix in (".depth.f32", ".f32"):
        if name.endswith(suffix):
            name = name[: -len(suffix)]
            break
    return Path(raster_path).parent / (name + ".meta.json")


def read_depth_raster(path: Path) -> tuple[np.ndarray, dict]:
    """Read a .f32 raster and its sidecar; returns (float64 (H, W) array, meta)."""
    path = Path(path)
    if not path.is_file():
        raise MissingFile(f"depth raster not found: {path}")
    mpath = meta_path(path)
    if not mpath.is_file():
        raise MissingFile(f"meta sidecar not found: {mpath}")
    meta = json.loads(mpath.read_text())
    w, h = int(meta["width"]), int(meta["height"])
    try:
        raw = np.frombuffer(path.read_bytes(), dtype="<f4")
    except ValueError as exc:
        raise IoFailure(f"{path}: {exc}") from exc
    if raw.size != w * h:
        raise IoFailure(f"{path}: expected {w * h} samples, found {raw.size}")
    return raw.reshape(h, w).astype(np.float64), meta


# --- PLY ---

_PLY_MESH_HEADER = (
    "ply\n"
    "format binary_little_endian 1.0\n"
    "element vertex {nv}\n"
    "property float x\n"
    "property float y\n"
    "property float z\n"
    "element face {nf}\n"
    "property list uchar int vertex_indices\n"
    "end_header\n"
)

_PLY_CLOUD_HEADER = (
    "ply\n"
    "format binary_little_endian 1.0\n"
    "element vertex {nv}\n"
    "property float x\n"
    "property float y\n"
    "property float z\n"
    "property uint support\n"
    "end_header\n"
)


def write_mesh_ply(path: Path, vertices: np.ndarray, triangles: np.ndarray) -> None:
    """Write a triangle mesh as binary little-endian PLY."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    verts = np.ascontiguousarray(vertices, dtype="<f4")
    tris = np.ascontiguousarray(triangles, dtype="<i4").reshape(-1, 3)
    with open(path, "wb") as f:
        f.write(_PLY_MESH_HEADER.format(nv=len(verts), nf=len(tris)).encode("ascii"))
        f.write(verts.tobytes())
        face = np.empty(
            len(tris), dtype=[("n", "u1"), ("i", "<i4"), ("j", "<i4"), ("k", "<i4")]
        )
        face["n"] = 3
        face["i"], face["j"], face["k"] = tris[:, 0], tris[:, 1], tris[:, 2]
        f.write(face.tobytes())


def write_mesh_obj(path: Path, vertices: np.ndarray, triangles: np.ndarray) -> None:
    """Write a triangle mesh as ASCII OBJ (1-based face indices)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = []
    for v in np.asarray(vertices, dtype=np.float64):
        lines.append(f"v {v[0]:.9g} {v[1]:.9g} {v[2]:.9g}")
    for t in np.asarray(triangles, dtype=np.int64).reshape(-1, 3):
        lines.append(f"f {t[0] + 1} {t[1] + 1} {t[2] + 1}")
    path.write_text("\n".join(lines) + "\n")


def write_point_cloud_ply(path: Path, points: np.ndarray, support: np.ndarray) -> None:
    """Write a fused point cloud with per-point support counts as binary PLY."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    pts = np.ascontiguousarray(points, dtype="<f4").reshape(-1, 3)
    sup = np.ascontiguousarray(support, dtype="<u4").reshape(-1)
    if len(sup) != len(pts):
        raise IoFailure("points and support counts differ in length")
    rec = np.empty(
        len(pts), dtype=[("x", "<f4"), ("y", "<f4"), ("z", "<f4"), ("s", "<u4")]
    )
    rec["x"], rec["y"], rec["z"] = pts[:, 0], pts[:, 1], pts[:, 2]
    rec["s"] = sup
    with open(path, "wb") as f:
        f.write(_PLY_CLOUD_HEADER.format(nv=len(pts)).encode("ascii"))
        f.write(rec.tobytes())


def _parse_ply_header(f) -> tuple[list[tuple[str, int, list[tuple[str, str]]]], bool]:
    magic = f.readline().strip()
    if magic != b"ply":
        raise IoFailure("not a PLY file")
    fmt = f.readline().strip().split()
    binary = fmt[1] == b"binary_little_endian"
    elements: list[tuple[str, int, list[tuple[str, str]]]] = []
    while True:
        line = f.readline()
        if not line:
            raise IoFailure("unterminated PLY header")
        tokens = line.strip().split()
        if not tokens:
            continue
        if tokens[0] == b"end_header":
            break
        if tokens[0] == b"element":
            elements.append((tokens[1].decode(), int(tokens[2]), []))
        elif tokens[0] == b"property":
            if tokens[1] == b"list":
                elements[-1][2].append(("list", tokens[4].decode()))
            else:
                elements[-1][2].append((tokens[1].decode(), tokens[2].decode()))
    return elements, binary


_PLY_SCALAR = {
    "float": "<f4", "float32": "<f4", "double": "<f8", "float64": "<f8",
    "uchar": "u1", "uint8": "u1", "char": "i1", "int8": "i1",
    "short": "<i2", "ushort": "<u2", "int": "<i4", "int32": "<i4",
    "uint": "<u4", "uint32": "<u4",
}


def read_mesh_ply(path: Path) -> tuple[np.ndarray, np.ndarray]:
    """Read vertices and triangles back from a binary PLY written by this module."""
    path = Path(path)
    if not path.is_file():
        raise MissingFile(f"mesh not found: {path}")
    with open(path, "rb") as f:
        elements, binary = _parse_ply_header(f)
        if not binary:
            raise IoFailure("only binary little-endian PLY is supported")
        vertices = np.zeros((0, 3), dtype=np.float64)
        triangles = np.zeros((0, 3), dtype=np.int64)
        for name, count, props in elements:
            if name == "vertex":
                dtype = np.dtype(
                    [(f"p{i}", _PLY_SCALAR[p[0]]) for i, p in enumerate(props)]
                )
                raw = np.frombuffer(f.read(dtype.itemsize * count), dtype=dtype)
                vertices = np.stack(
                    [raw["p0"], raw["p1"], raw["p2"]], axis=1
                ).astype(np.float64)
            elif name == "face":
                tris = np.empty((count, 3), dtype=np.int64)
                for i in range(count):
                    (n,) = struct.unpack("<B", f.read(1))
                    if n != 3:
                        raise IoFailure("non-triangular face in PLY")
                    tris[i] = struct.unpack("<3i", f.read(12))
                triangles = tris
            else:
                raise IoFailure(f"unsupported PLY element {name}")
    return vertices, triangles


def read_point_cloud_ply(path: Path) -> tuple[np.ndarray, np.ndarray]:
    """Read (points, support) from a binary PLY written by write_point_cloud_ply."""
    path = Path(path)
    if not path.is_file():
        raise MissingFile(f"point cloud not found: {path}")
    with open(path, "rb") as f:
        elements, binary = _parse_ply_header(f)
        if not binary:
            raise IoFailure("only binary little-endian PLY is supported")
        name, count, props = elements[0]
        dtype = np.dtype([(f"p{i}", _PLY_SCALAR[p[0]]) for i, p in enumerate(props)])
        raw = np.frombuffer(f.read(dtype.itemsize * count), dtype=dtype)
        points = np.stack([raw["p0"], raw["p1"], raw["p2"]], axis=1).astype(np.float64)
        support = raw["p3"].astype(np.int64) if len(props) > 3 else np.ones(count, np.int64)
    return points, support
