"""Camera math and projection of the SfM point cloud into per-view sparse depth.

Depth everywhere in this package is z-depth: the z coordinate of a surface
point in the camera frame, not the distance along the ray.
"""

from dataclasses import dataclass

import numpy as np

from .errors import UnknownImage
from .sfm_io import INVALID_POINT3D, CameraIntrinsics, PosedImage, SfmModel

Z_EPS = 1e-6  # behind-camera cutoff, scene units


def quat_to_rotmat(qvec: np.ndarray) -> np.ndarray:
    """Rotation matrix for a (qw, qx, qy, qz) unit quaternion."""
    w, x, y, z = qvec
    return np.array(
        [
            [1 - 2 * y * y - 2 * z * z, 2 * x * y - 2 * w * z, 2 * z * x + 2 * w * y],
            [2 * x * y + 2 * w * z, 1 - 2 * x * x - 2 * z * z, 2 * y * z - 2 * w * x],
            [2 * z * x - 2 * w * y, 2 * y * z + 2 * w * x, 1 - 2 * x * x - 2 * y * y],
        ]
    )


def world_to_camera(pose: PosedImage, xyz_world: np.ndarray) -> np.ndarray:
    """Transform world points into the camera frame: R(q) @ x + t.

    Accepts a single (3,) point or an (N, 3) array.
    """
    R = quat_to_rotmat(pose.qvec)
    pts = np.asarray(xyz_world, dtype=np.float64)
    if pts.ndim == 1:
        return R @ pts + pose.tvec
    return pts @ R.T + pose.tvec


def camera_to_world(pose: PosedImage, xyz_cam: np.ndarray) -> np.ndarray:
    """Inverse of world_to_camera."""
    R = quat_to_rotmat(pose.qvec)
    pts = np.asarray(xyz_cam, dtype=np.float64)
    if pts.ndim == 1:
        return R.T @ (pts - pose.tvec)
    return (pts - pose.tvec) @ R


def project_points(
    cam: CameraIntrinsics, xyz_cam: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Project camera-frame points to pixels, without bounds checking.

    Returns (uv, valid) where valid is False for points with z <= Z_EPS.
    Invalid rows of uv are zeroed.
    """
    pts = np.asarray(xyz_cam, dtype=np.float64).reshape(-1, 3)
    z = pts[:, 2]
    valid = z > Z_EPS
    safe_z = np.where(valid, z, 1.0)
    xn = pts[:, 0] / safe_z
    yn = pts[:, 1] / safe_z
    if cam.model == "SIMPLE_RADIAL":
        r2 = xn * xn + yn * yn
        factor = 1.0 + cam.radial_k * r2
        xn = xn * factor
        yn = yn * factor
    uv = np.column_stack([cam.fx * xn + cam.cx, cam.fy * yn + cam.cy])
    uv[~valid] = 0.0
    return uv, valid


def in_bounds(cam: CameraIntrinsics, uv: np.ndarray) -> np.ndarray:
    """True where the nearest integer pixel of a continuous (u, v) is inside the image."""
    uv = np.asarray(uv, dtype=np.float64).reshape(-1, 2)
    col = np.rint(uv[:, 0])
    row = np.rint(uv[:, 1])
    return (col >= 0) & (col <= cam.width - 1) & (row >= 0) & (row <= cam.height - 1)


def project(cam: CameraIntrinsics, xyz_cam: np.ndarray) -> tuple[float, float] | None:
    """Project one camera-frame point; None if behind the camera or out of bounds."""
    uv, valid = project_points(cam, np.asarray(xyz_cam).reshape(1, 3))
    if not valid[0] or not in_bounds(cam, uv)[0]:
        return None
    return float(uv[0, 0]), float(uv[0, 1])


def pixel_rays(cam: CameraIntrinsics, uv: np.ndarray) -> np.ndarray:
    """Camera-frame ray directions (unit z) through continuous pixel coordinates.

    For SIMPLE_RADIAL the radial distortion is inverted with a few Newton
    steps on the radius (k is small for the supported cameras).
    """
    uv = np.asarray(uv, dtype=np.float64).reshape(-1, 2)
    xn = (uv[:, 0] - cam.cx) / cam.fx
    yn = (uv[:, 1] - cam.cy) / cam.fy
    if cam.model == "SIMPLE_RADIAL" and cam.radial_k != 0.0:
        rd = np.sqrt(xn * xn + yn * yn)
        r = rd.copy()
        for _ in range(10):
            f = r * (1.0 + cam.radial_k * r * r) - rd
            df = 1.0 + 3.0 * cam.radial_k * r * r
            r = r - f / df
        scale = np.where(rd > 0, r / np.maximum(rd, 1e-30), 1.0)
        xn = xn * scale
        yn = yn * scale
    return np.column_stack([xn, yn, np.ones_like(xn)])


def backproject(cam: CameraIntrinsics, uv: np.ndarray, depth: np.ndarray) -> np.ndarray:
    """Camera-frame 3D points for pixels at given z-depths."""
    rays = pixel_rays(cam, uv)
    return rays * np.asarray(depth, dtype=np.float64).reshape(-1, 1)


@dataclass
class SparseDepthMap:
    """Per-view sparse depth: 0 encodes empty, valued pixels are positive.

    source_point carries the originating point3d_id per valued pixel
    (-1 where empty).
    """

    width: int
    height: int
    depth: np.ndarray
    source_point: np.ndarray

    @staticmethod
    def empty(width: int, height: int) -> "SparseDepthMap":
        return SparseDepthMap(
            width,
            height,
            np.zeros((height, width), dtype=np.float64),
            np.full((height, width), INVALID_POINT3D, dtype=np.int64),
        )

    @property
    def mask(self) -> np.ndarray:
        return self.depth > 0

    def valued_count(self) -> int:
        return int(np.count_nonzero(self.mask))

    def values(self) -> np.ndarray:
        return self.depth[self.mask]


def render_sparse_depth(
    model: SfmModel,
    image_id: int,
    use_visibility: bool = True,
    splat: str = "observed",
) -> SparseDepthMap:
    """Project scene points into one view as a sparse depth map.

    With use_visibility, only points whose track contains the view are
    rendered, each at its recorded observation pixel (splat="observed") or
    at its reprojection (splat="reprojected"). Without visibility gating,
    tracked points keep their observed pixel and all remaining points are
    reprojected. Pixels are rounded to the nearest integer; collisions keep
    the smaller depth.

    Raises:
        UnknownImage: image_id is not part of the model.
    """
    if image_id not in model.images:
        raise UnknownImage(f"image {image_id} not in model")
    img = model.images[image_id]
    cam = model.cameras[img.camera_id]
    out = SparseDepthMap.empty(cam.width, cam.height)

    tracked: dict[int, int] = {}  # point3d_id -> observation index
    for i, pid in enumerate(img.point3d_ids):
        if pid != INVALID_POINT3D:
            tracked[int(pid)] = i

    entries: list[tuple[int, float, float, float]] = []  # (pid, u, v, z)
    for pid in sorted(model.points):
        pt = model.points[pid]
        is_tracked = pid in tracked
        if use_visibility and not is_tracked:
            continue
        z = float(world_to_camera(img, pt.xyz)[2])
        if z <= Z_EPS:
            continue
        if is_tracked and splat == "observed":
            u, v = img.xys[tracked[pid]]
        else:
            uv = project(cam, world_to_camera(img, pt.xyz))
            if uv is None:
                continue
            u, v = uv
        entries.append((pid, float(u), float(v), z))

    for pid, u, v, z in entries:
        col = int(np.rint(u))
        row = int(np.rint(v))
        if not (0 <= col < cam.width and 0 <= row < cam.height):
            continue
        current = out.depth[row, col]
        if current == 0.0 or z < current:
            out.depth[row, col] = z
            out.source_point[row, col] = pid
    return out
