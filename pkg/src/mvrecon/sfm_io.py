"""COLMAP sparse model reader/writer (text and binary variants).

Supported camera models: SIMPLE_PINHOLE, PINHOLE, SIMPLE_RADIAL. The binary
layout follows COLMAP's published format: little-endian, u64 record counts,
f64 coordinates, null-terminated image names. Observations without a 3D
point keep the -1 sentinel. Text output uses 17 significant digits so that
every f64 survives a round trip.
"""

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    BrokenReference,
    MalformedRecord,
    MissingFile,
    UnsupportedCameraModel,
)

CAMERA_MODEL_IDS = {"SIMPLE_PINHOLE": 0, "PINHOLE": 1, "SIMPLE_RADIAL": 2}
CAMERA_MODEL_NAMES = {v: k for k, v in CAMERA_MODEL_IDS.items()}
CAMERA_MODEL_NUM_PARAMS = {"SIMPLE_PINHOLE": 3, "PINHOLE": 4, "SIMPLE_RADIAL": 4}

INVALID_POINT3D = -1


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole-family intrinsics; fx == fy for the single-focal models."""

    camera_id: int
    model: str
    width: int
    height: int
    fx: float
    fy: float
    cx: float
    cy: float
    radial_k: float = 0.0

    def validate(self) -> None:
        if self.model not in CAMERA_MODEL_IDS:
            raise UnsupportedCameraModel(f"camera model {self.model!r}")
        if self.fx <= 0 or self.fy <= 0:
            raise MalformedRecord(f"camera {self.camera_id}: non-positive focal")
        if self.width <= 0 or self.height <= 0:
            raise MalformedRecord(f"camera {self.camera_id}: non-positive size")
        if not (0 <= self.cx <= self.width and 0 <= self.cy <= self.height):
            raise MalformedRecord(
                f"camera {self.camera_id}: principal point outside image"
            )

    def params(self) -> list[float]:
        if self.model == "SIMPLE_PINHOLE":
            return [self.fx, self.cx, self.cy]
        if self.model == "PINHOLE":
            return [self.fx, self.fy, self.cx, self.cy]
        return [self.fx, self.cx, self.cy, self.radial_k]

    @staticmethod
    def from_params(
        camera_id: int, model: str, width: int, height: int, params: list[float]
    ) -> "CameraIntrinsics":
        if model not in CAMERA_MODEL_IDS:
            raise UnsupportedCameraModel(f"camera model {model!r}")
        if len(params) != CAMERA_MODEL_NUM_PARAMS[model]:
            raise MalformedRecord(
                f"camera {camera_id}: expected "
                f"{CAMERA_MODEL_NUM_PARAMS[model]} params, got {len(params)}"
            )
        if model == "SIMPLE_PINHOLE":
            f, cx, cy = params
            return CameraIntrinsics(camera_id, model, width, height, f, f, cx, cy)
        if model == "PINHOLE":
            fx, fy, cx, cy = params
            return CameraIntrinsics(camera_id, model, width, height, fx, fy, cx, cy)
        f, cx, cy, k = params
        return CameraIntrinsics(camera_id, model, width, height, f, f, cx, cy, k)


@dataclass(frozen=True)
class PosedImage:
    """World-to-camera pose plus 2D observations.

    xys is (N, 2) pixel coordinates; point3d_ids is (N,) with -1 for
    observations that were never triangulated.
    """

    image_id: int
    camera_id: int
    qvec: np.ndarray  # (qw, qx, qy, qz), unit norm
    tvec: np.ndarray
    name: str
    xys: np.ndarray
    point3d_ids: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "qvec", np.asarray(self.qvec, dtype=np.float64))
        object.__setattr__(self, "tvec", np.asarray(self.tvec, dtype=np.float64))
        object.__setattr__(
            self, "xys", np.asarray(self.xys, dtype=np.float64).reshape(-1, 2)
        )
        object.__setattr__(
            self, "point3d_ids", np.asarray(self.point3d_ids, dtype=np.int64).reshape(-1)
        )

    def validate(self) -> None:
        if abs(float(np.linalg.norm(self.qvec)) - 1.0) > 1e-9:
            raise MalformedRecord(f"image {self.image_id}: quaternion not unit")
        if len(self.xys) != len(self.point3d_ids):
            raise MalformedRecord(f"image {self.image_id}: ragged observations")


@dataclass(frozen=True)
class ScenePoint:
    """Triangulated 3D point with its visibility track."""

    point3d_id: int
    xyz: np.ndarray
    rgb: tuple[int, int, int]
    error: float
    track_image_ids: np.ndarray
    track_obs_indices: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "xyz", np.asarray(self.xyz, dtype=np.float64))
        object.__setattr__(
            self,
            "track_image_ids",
            np.asarray(self.track_image_ids, dtype=np.int64).reshape(-1),
        )
        object.__setattr__(
            self,
            "track_obs_indices",
            np.asarray(self.track_obs_indices, dtype=np.int64).reshape(-1),
        )


@dataclass(frozen=True)
class SfmModel:
    """Validated in-memory sparse reconstruction; treat as immutable."""

    cameras: dict[int, CameraIntrinsics]
    images: dict[int, PosedImage]
    points: dict[int, ScenePoint] = field(default_factory=dict)

    def validate(self) -> None:
        if not self.images:
            raise MalformedRecord("model has no images")
        for cam in self.cameras.values():
            cam.validate()
        for img in self.images.values():
            img.validate()
            if img.camera_id not in self.cameras:
                raise BrokenReference(
                    f"image {img.image_id} references missing camera {img.camera_id}"
                )
            for pid in img.point3d_ids:
                if pid != INVALID_POINT3D and int(pid) not in self.points:
                    raise BrokenReference(
                        f"image {img.image_id} references missing point {int(pid)}"
                    )
        for pt in self.points.values():
            if len(pt.track_image_ids) == 0:
                raise BrokenReference(f"point {pt.point3d_id} has an empty track")
            for img_id, obs_i in zip(pt.track_image_ids, pt.track_obs_indices):
                img = self.images.get(int(img_id))
                if img is None:
                    raise BrokenReference(
                        f"point {pt.point3d_id} tracked in missing image {int(img_id)}"
                    )
                if not (0 <= obs_i < len(img.point3d_ids)) or int(
                    img.point3d_ids[obs_i]
                ) != pt.point3d_id:
                    raise BrokenReference(
                        f"point {pt.point3d_id} track does not back-reference "
                        f"image {int(img_id)} observation {int(obs_i)}"
                    )


# --- reading ---

def _read_bytes(f, n: int, fmt: str):
    data = f.read(n)
    if len(data) != n:
        raise MalformedRecord(f"{f.name}: truncated at offset {f.tell()}")
    return struct.unpack("<" + fmt, data)


def _data_lines(path: Path):
    with open(path, "r") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if line and not line.startswith("#"):
                yield lineno, line


def read_cameras_text(path: Path) -> dict[int, CameraIntrinsics]:
    cameras = {}
    for lineno, line in _data_lines(path):
        elems = line.split()
        try:
            camera_id = int(elems[0])
            model = elems[1]
            width, height = int(elems[2]), int(elems[3])
            params = [float(x) for x in elems[4:]]
        except (ValueError, IndexError) as exc:
            raise MalformedRecord(f"{path}:{lineno}: {exc}") from exc
        if camera_id in cameras:
            raise MalformedRecord(f"{path}:{lineno}: duplicate camera {camera_id}")
        cameras[camera_id] = CameraIntrinsics.from_params(
            camera_id, model, width, height, params
        )
    return cameras


def read_cameras_binary(path: Path) -> dict[int, CameraIntrinsics]:
    cameras = {}
    with open(path, "rb") as f:
        (num,) = _read_bytes(f, 8, "Q")
        for _ in range(num):
            camera_id, model_id, width, height = _read_bytes(f, 24, "iiQQ")
            if model_id not in CAMERA_MODEL_NAMES:
                raise UnsupportedCameraModel(f"camera model id {model_id}")
            model = CAMERA_MODEL_NAMES[model_id]
            n = CAMERA_MODEL_NUM_PARAMS[model]
            params = list(_read_bytes(f, 8 * n, "d" * n))
            cameras[camera_id] = CameraIntrinsics.from_params(
                camera_id, model, int(width), int(height), params
            )
    return cameras


def read_images_text(path: Path) -> dict[int, PosedImage]:
    images = {}
    pending = None
    with open(path, "r") as f:
        raw_lines = f.readlines()
    for lineno, raw in enumerate(raw_lines, start=1):
        line = raw.strip()
        if pending is None and (not line or line.startswith("#")):
            continue
        if pending is None:
            elems = line.split()
            try:
                image_id = int(elems[0])
                qvec = [float(x) for x in elems[1:5]]
                tvec = [float(x) for x in elems[5:8]]
                camera_id = int(elems[8])
                name = elems[9]
            except (ValueError, IndexError) as exc:
                raise MalformedRecord(f"{path}:{lineno}: {exc}") from exc
            if image_id in images:
                raise MalformedRecord(f"{path}:{lineno}: duplicate image {image_id}")
            pending = (image_id, qvec, tvec, camera_id, name)
        else:
            elems = line.split()
            if len(elems) % 3 != 0:
                raise MalformedRecord(f"{path}:{lineno}: ragged observation list")
            xs = [float(x) for x in elems[0::3]]
            ys = [float(y) for y in elems[1::3]]
            pids = [int(p) for p in elems[2::3]]
            image_id, qvec, tvec, camera_id, name = pending
            images[image_id] = PosedImage(
                image_id, camera_id, qvec, tvec, name,
                np.column_stack([xs, ys]) if xs else np.zeros((0, 2)),
                np.asarray(pids, dtype=np.int64),
            )
            pending = None
    if pending is not None:
        # Image record whose observation line is missing: COLMAP always
        # emits the second line, even when empty.
        raise MalformedRecord(f"{path}: image {pending[0]} missing observation line")
    return images


def read_images_binary(path: Path) -> dict[int, PosedImage]:
    images = {}
    with open(path, "rb") as f:
        (num,) = _read_bytes(f, 8, "Q")
        for _ in range(num):
            props = _read_bytes(f, 64, "idddddddi")
            image_id = props[0]
            qvec = props[1:5]
            tvec = props[5:8]
            camera_id = props[8]
            name_bytes = bytearray()
            while True:
                (c,) = _read_bytes(f, 1, "c")
                if c == b"\x00":
                    break
                name_bytes += c
            (n_obs,) = _read_bytes(f, 8, "Q")
            data = _read_bytes(f, 24 * n_obs, "ddq" * n_obs)
            xys = np.array(
                [data[0::3], data[1::3]], dtype=np.float64
            ).T.reshape(-1, 2)
            pids = np.array(data[2::3], dtype=np.int64)
            if image_id in images:
                raise MalformedRecord(f"{path}: duplicate image {image_id}")
            images[image_id] = PosedImage(
                image_id, camera_id, qvec, tvec,
                name_bytes.decode("utf-8"), xys, pids,
            )
    return images


def read_points3d_text(path: Path) -> dict[int, ScenePoint]:
    points = {}
    for lineno, line in _data_lines(path):
        elems = line.split()
        try:
            pid = int(elems[0])
            xyz = [float(x) for x in elems[1:4]]
            rgb = (int(elems[4]), int(elems[5]), int(elems[6]))
            error = float(elems[7])
            img_ids = [int(x) for x in elems[8::2]]
            obs_idx = [int(x) for x in elems[9::2]]
        except (ValueError, IndexError) as exc:
            raise MalformedRecord(f"{path}:{lineno}: {exc}") from exc
        if pid in points:
            raise MalformedRecord(f"{path}:{lineno}: duplicate point {pid}")
        points[pid] = ScenePoint(pid, xyz, rgb, error, img_ids, obs_idx)
    return points


def read_points3d_binary(path: Path) -> dict[int, ScenePoint]:
    points = {}
    with open(path, "rb") as f:
        (num,) = _read_bytes(f, 8, "Q")
        for _ in range(num):
            props = _read_bytes(f, 43, "QdddBBBd")
            pid = props[0]
            xyz = props[1:4]
            rgb = (props[4], props[5], props[6])
            error = props[7]
            (track_len,) = _read_bytes(f, 8, "Q")
            track = _read_bytes(f, 8 * track_len, "ii" * track_len)
            points[pid] = ScenePoint(
                pid, xyz, rgb, error, list(track[0::2]), list(track[1::2])
            )
    return points


def read_model(path: Path, format: str = "auto") -> SfmModel:
    """Read a COLMAP sparse model directory into a validated SfmModel.

    Args:
        path: Directory containing cameras/images/points3D files.
        format: "text", "binary", or "auto" (detect by file extension).

    Raises:
        MissingFile: A component file is absent.
        MalformedRecord: A record failed to parse or violates an invariant.
        BrokenReference: Cross-references between files are inconsistent.
    """
    path = Path(path)
    if format == "auto":
        if (path / "cameras.bin").is_file():
            format = "binary"
        elif (path / "cameras.txt").is_file():
            format = "text"
        else:
            raise MissingFile(f"no cameras.bin or cameras.txt in {path}")
    ext = ".bin" if format == "binary" else ".txt"
    for stem in ("cameras", "images", "points3D"):
        if not (path / (stem + ext)).is_file():
            raise MissingFile(f"missing {stem}{ext} in {path}")
    if format == "binary":
        cameras = read_cameras_binary(path / "cameras.bin")
        images = read_images_binary(path / "images.bin")
        points = read_points3d_binary(path / "points3D.bin")
    else:
        cameras = read_cameras_text(path / "cameras.txt")
        images = read_images_text(path / "images.txt")
        points = read_points3d_text(path / "points3D.txt")
    model = SfmModel(cameras, images, points)
    model.validate()
    return model


# --- writing ---

def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def write_cameras_text(cameras: dict[int, CameraIntrinsics], path: Path) -> None:
    with open(path, "w") as f:
        f.write("# Camera list with one line of data per camera:\n")
        f.write("#   CAMERA_ID, MODEL, WIDTH, HEIGHT, PARAMS[]\n")
        f.write(f"# Number of cameras: {len(cameras)}\n")
        for cid in sorted(cameras):
            cam = cameras[cid]
            params = " ".join(_fmt(p) for p in cam.params())
            f.write(f"{cid} {cam.model} {cam.width} {cam.height} {params}\n")


def write_cameras_binary(cameras: dict[int, CameraIntrinsics], path: Path) -> None:
    with open(path, "wb") as f:
        f.write(struct.pack("<Q", len(cameras)))
        for cid in sorted(cameras):
            cam = cameras[cid]
            f.write(
                struct.pack(
                    "<iiQQ", cid, CAMERA_MODEL_IDS[cam.model], cam.width, cam.height
                )
            )
            for p in cam.params():
                f.write(struct.pack("<d", p))


def write_images_text(images: dict[int, PosedImage], path: Path) -> None:
    with open(path, "w") as f:
        f.write("# Image list with two lines of data per image:\n")
        f.write("#   IMAGE_ID, QW, QX, QY, QZ, TX, TY, TZ, CAMERA_ID, NAME\n")
        f.write("#   POINTS2D[] as (X, Y, POINT3D_ID)\n")
        f.write(f"# Number of images: {len(images)}\n")
        for iid in sorted(images):
            img = images[iid]
            pose = " ".join(_fmt(v) for v in list(img.qvec) + list(img.tvec))
            f.write(f"{iid} {pose} {img.camera_id} {img.name}\n")
            obs = " ".join(
                f"{_fmt(x)} {_fmt(y)} {int(p)}"
                for (x, y), p in zip(img.xys, img.point3d_ids)
            )
            f.write(obs + "\n")


def write_images_binary(images: dict[int, PosedImage], path: Path) -> None:
    with open(path, "wb") as f:
        f.write(struct.pack("<Q", len(images)))
        for iid in sorted(images):
            img = images[iid]
            f.write(struct.pack("<i", iid))
            f.write(struct.pack("<7d", *img.qvec, *img.tvec))
            f.write(struct.pack("<i", img.camera_id))
            f.write(img.name.encode("utf-8") + b"\x00")
            f.write(struct.pack("<Q", len(img.point3d_ids)))
            for (x, y), p in zip(img.xys, img.point3d_ids):
                f.write(struct.pack("<ddq", x, y, int(p)))


def write_points3d_text(points: dict[int, ScenePoint], path: Path) -> None:
    with open(path, "w") as f:
        f.write("# 3D point list with one line of data per point:\n")
        f.write(
            "#   POINT3D_ID, X, Y, Z, R, G, B, ERROR, "
            "TRACK[] as (IMAGE_ID, POINT2D_IDX)\n"
        )
        f.write(f"# Number of points: {len(points)}\n")
        for pid in sorted(points):
            pt = points[pid]
            xyz = " ".join(_fmt(v) for v in pt.xyz)
            rgb = " ".join(str(int(c)) for c in pt.rgb)
            track = " ".join(
                f"{int(i)} {int(o)}"
                for i, o in zip(pt.track_image_ids, pt.track_obs_indices)
            )
            f.write(f"{pid} {xyz} {rgb} {_fmt(pt.error)} {track}\n")


def write_points3d_binary(points: dict[int, ScenePoint], path: Path) -> None:
    with open(path, "wb") as f:
        f.write(struct.pack("<Q", len(points)))
        for pid in sorted(points):
            pt = points[pid]
            f.write(struct.pack("<Q", pid))
            f.write(struct.pack("<3d", *pt.xyz))
            f.write(struct.pack("<3B", *(int(c) for c in pt.rgb)))
            f.write(struct.pack("<d", pt.error))
            f.write(struct.pack("<Q", len(pt.track_image_ids)))
            for i, o in zip(pt.track_image_ids, pt.track_obs_indices):
                f.write(struct.pack("<ii", int(i), int(o)))


def write_model(model: SfmModel, path: Path, format: str = "binary") -> None:
    """Write a model in COLMAP layout; records are sorted by id for stable bytes."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    if format == "binary":
        write_cameras_binary(model.cameras, path / "cameras.bin")
        write_images_binary(model.images, path / "images.bin")
        write_points3d_binary(model.points, path / "points3D.bin")
    elif format == "text":
        write_cameras_text(model.cameras, path / "cameras.txt")
        write_images_text(model.images, path / "images.txt")
        write_points3d_text(model.points, path / "points3D.txt")
    else:
        raise ValueError(f"unknown format {format!r}")


def models_equal(a: SfmModel, b: SfmModel) -> bool:
    """Structural equality, exact on every field (f64 compared bitwise)."""
    if sorted(a.cameras) != sorted(b.cameras):
        return False
    if sorted(a.images) != sorted(b.images):
        return False
    if sorted(a.points) != sorted(b.points):
        return False
    for cid, ca in a.cameras.items():
        if ca != b.cameras[cid]:
            return False
    for iid, ia in a.images.items():
        ib = b.images[iid]
        if (
            ia.camera_id != ib.camera_id
            or ia.name != ib.name
            or not np.array_equal(ia.qvec, ib.qvec)
            or not np.array_equal(ia.tvec, ib.tvec)
            or not np.array_equal(ia.xys, ib.xys)
            or not np.array_equal(ia.point3d_ids, ib.point3d_ids)
        ):
            return False
    for pid, pa in a.points.items():
        pb = b.points[pid]
        if (
            pa.rgb != pb.rgb
            or pa.error != pb.error
            or not np.array_equal(pa.xyz, pb.xyz)
            or not np.array_equal(pa.track_image_ids, pb.track_image_ids)
            or not np.array_equal(pa.track_obs_indices, pb.track_obs_indices)
        ):
            return False
    return True
