"""Procedural test scenes with exact analytic ground truth.

Generates an analytic surface (plane, sphere, or axis-aligned room), a
camera trajectory facing it, dense ground-truth z-depth per view via ray
intersection, and an SfM-style sparse model whose points are sampled from
the ground truth, optionally perturbed and salted with gross outliers whose
identities are recorded. Everything is deterministic under the seed.
"""

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import InvalidSpec
from .fileio import write_depth_raster, write_mesh_ply
from .fusion import TriangleMesh
from .geometry import quat_to_rotmat
from .providers import DenseDepthMap
from .sfm_io import (
    CameraIntrinsics,
    PosedImage,
    ScenePoint,
    SfmModel,
    write_model,
)

PLANE = "plane"
SPHERE = "sphere"
ROOM = "room"

OCCLUSION_TOL = 0.02  # relative z slack when deciding cross-view visibility


@dataclass
class SceneSpec:
    shape: str = PLANE
    plane_z: float = 2.0
    radius: float = 1.0
    room_extents: tuple[float, float, float] = (4.0, 4.0, 2.5)
    n_views: int = 8
    trajectory: str = "orbit"  # orbit | line
    image_size: tuple[int, int] = (64, 64)  # (width, height)
    sparse_points_per_view: int = 200
    outlier_fraction: float = 0.0
    noise_depth: float = 0.0
    seed: int = 0
    fov_deg: float = 60.0
    cam_distance: float | None = None

    def validate(self) -> None:
        if self.shape not in (PLANE, SPHERE, ROOM):
            raise InvalidSpec(f"unknown shape {self.shape!r}")
        if self.trajectory not in ("orbit", "line"):
            raise InvalidSpec(f"unknown trajectory {self.trajectory!r}")
        if self.n_views < 1:
            raise InvalidSpec("need at least one view")
        if self.sparse_points_per_view < 0:
            raise InvalidSpec("sparse point count must be >= 0")
        if not (0 <= self.outlier_fraction < 1):
            raise InvalidSpec("outlier_fraction must be in [0, 1)")
        if self.shape == SPHERE and self.radius <= 0:
            raise InvalidSpec("sphere radius must be positive")
        if self.shape == ROOM and min(self.room_extents) <= 0:
            raise InvalidSpec("room extents must be positive")
        if not (10 < self.fov_deg < 170):
            raise InvalidSpec("fov must be in (10, 170) degrees")


@dataclass
class SyntheticScene:
    spec: SceneSpec
    model: SfmModel
    gt_depths: dict[int, DenseDepthMap]
    gt_mesh: TriangleMesh
    outlier_point_ids: frozenset[int] = field(default_factory=frozenset)
    depth_bounds: tuple[float, float] = (0.0, 0.0)


def rotmat_to_quat(R: np.ndarray) -> np.ndarray:
    """Unit (qw, qx, qy, qz) for a rotation matrix (sign fixed to qw >= 0)."""
    Rxx, Ryx, Rzx, Rxy, Ryy, Rzy, Rxz, Ryz, Rzz = R.flat
    K = np.array(
        [
            [Rxx - Ryy - Rzz, 0, 0, 0],
            [Ryx + Rxy, Ryy - Rxx - Rzz, 0, 0],
            [Rzx + Rxz, Rzy + Ryz, Rzz - Rxx - Ryy, 0],
            [Ryz - Rzy, Rzx - Rxz, Rxy - Ryx, Rxx + Ryy + Rzz],
        ]
    ) / 3.0
    eigvals, eigvecs = np.linalg.eigh(K)
    q = eigvecs[[3, 0, 1, 2], np.argmax(eigvals)]
    if q[0] < 0:
        q = -q
    return q / np.linalg.norm(q)


def look_at(center: np.ndarray, target: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """World-to-camera (qvec, tvec) for a camera at center facing target."""
    forward = np.asarray(target, float) - np.asarray(center, float)
    forward = forward / np.linalg.norm(forward)
    helper = np.array([0.0, 0.0, 1.0])
    if abs(float(forward @ helper)) > 0.999:
        helper = np.array([0.0, 1.0, 0.0])
    x_axis = np.cross(forward, helper)
    x_axis = x_axis / np.linalg.norm(x_axis)
    y_axis = np.cross(forward, x_axis)
    R = np.stack([x_axis, y_axis, forward])
    q = rotmat_to_quat(R)
    R = quat_to_rotmat(q)  # re-derive so pose and quaternion agree exactly
    t = -R @ np.asarray(center, float)
    return q, t


def _fibonacci_directions(n: int) -> np.ndarray:
    """n roughly uniform unit directions (spherical Fibonacci spiral)."""
    i = np.arange(n, dtype=np.float64)
    phi = math.pi * (3.0 - math.sqrt(5.0)) * i
    z = 1.0 - 2.0 * (i + 0.5) / n
    r = np.sqrt(np.maximum(0.0, 1.0 - z * z))
    return np.column_stack([r * np.cos(phi), r * np.sin(phi), z])


def _camera(spec: SceneSpec) -> CameraIntrinsics:
    w, h = spec.image_size
    f = (w / 2.0) / math.tan(math.radians(spec.fov_deg) / 2.0)
    return CameraIntrinsics(1, "PINHOLE", w, h, f, f, w / 2.0, h / 2.0)


def _poses(spec: SceneSpec) -> list[tuple[np.ndarray, np.ndarray]]:
    n = spec.n_views
    if spec.shape == PLANE:
        d = spec.cam_distance if spec.cam_distance is not None else spec.plane_z
        target = np.array([0.0, 0.0, spec.plane_z])
        if n == 1:
            return [look_at(np.array([0.0, 0.0, spec.plane_z - d]), target)]
        out = []
        if spec.trajectory == "line":
            xs = np.linspace(-0.4 * d, 0.4 * d, n)
            centers = [np.array([x, 0.0, spec.plane_z - d]) for x in xs]
        else:
            ang = 2 * math.pi * np.arange(n) / n
            r = 0.3 * d
            centers = [
                np.array([r * math.cos(a), r * math.sin(a), spec.plane_z - d])
                for a in ang
            ]
        for c in centers:
            out.append(look_at(c, target))
        return out
    if spec.shape == SPHERE:
        d = spec.cam_distance if spec.cam_distance is not None else 3.0 * spec.radius
        target = np.zeros(3)
        out = []
        if spec.trajectory == "line":
            xs = np.linspace(-0.5 * d, 0.5 * d, n)
            centers = [np.array([x, -d, 0.0]) for x in xs]
        else:
            elevations = [-0.45, 0.0, 0.45]  # radians, cycled for pole coverage
            centers = []
            for i in range(n):
                a = 2 * math.pi * i / n
                el = elevations[i % len(elevations)] if n > 1 else 0.0
                centers.append(
                    d
                    * np.array(
                        [
                            math.cos(el) * math.cos(a),
                            math.cos(el) * math.sin(a),
                            math.sin(el),
                        ]
                    )
                )
        for c in centers:
            out.append(look_at(c, target))
        return out
    # room: cameras near the center, directions spread over the sphere
    half = 0.5 * np.asarray(spec.room_extents)
    dirs = _fibonacci_directions(n)
    out = []
    for k in range(n):
        c = -0.08 * min(half) * dirs[k]  # step back slightly from the view direction
        out.append(look_at(c, c + dirs[k]))
    return out


def _ray_depths(
    spec: SceneSpec, cam: CameraIntrinsics, qvec: np.ndarray, tvec: np.ndarray
) -> np.ndarray:
    """Analytic z-depth for every pixel; NaN where the ray misses the surface.

    Rays are parametrized with unit z in the camera frame, so the ray
    parameter at the hit equals the z-depth directly.
    """
    w, h = cam.width, cam.height
    cols, rows = np.meshgrid(np.arange(w), np.arange(h))
    xn = (cols - cam.cx) / cam.fx
    yn = (rows - cam.cy) / cam.fy
    dirs_cam = np.stack([xn, yn, np.ones_like(xn)], axis=-1).reshape(-1, 3)
    R = quat_to_rotmat(qvec)
    center = -R.T @ tvec
    dirs_w = dirs_cam @ R
    if spec.shape == PLANE:
        dz = dirs_w[:, 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            t = (spec.plane_z - center[2]) / dz
        t = np.where((dz > 1e-12) & (t > 1e-9), t, np.nan)
        return t.reshape(h, w)
    if spec.shape == SPHERE:
        oc = center  # sphere centered at the origin
        a = (dirs_w * dirs_w).sum(axis=1)
        b = 2.0 * dirs_w @ oc
        c0 = float(oc @ oc) - spec.radius**2
        disc = b * b - 4 * a * c0
        with np.errstate(invalid="ignore"):
            t = (-b - np.sqrt(disc)) / (2 * a)
        t = np.where((disc >= 0) & (t > 1e-9), t, np.nan)
        return t.reshape(h, w)
    half = 0.5 * np.asarray(spec.room_extents)
    if np.any(np.abs(center) >= half):
        raise InvalidSpec("room cameras must be strictly inside the box")
    t_exit = np.full(len(dirs_w), np.inf)
    for axis in range(3):
        d = dirs_w[:, axis]
        with np.errstate(divide="ignore", invalid="ignore"):
            t_axis = (np.sign(d) * half[axis] - center[axis]) / d
        t_axis = np.where(np.abs(d) > 1e-15, t_axis, np.inf)
        t_exit = np.minimum(t_exit, t_axis)
    return t_exit.reshape(h, w)


def _plane_mesh(spec: SceneSpec, poses, cam: CameraIntrinsics) -> TriangleMesh:
    xs, ys = [], []
    for qvec, tvec in poses:
        R = quat_to_rotmat(qvec)
        center = -R.T @ tvec
        corners = np.array(
            [[0, 0], [cam.width - 1, 0], [0, cam.height - 1],
             [cam.width - 1, cam.height - 1]],
            dtype=np.float64,
        )
        xn = (corners[:, 0] - cam.cx) / cam.fx
        yn = (corners[:, 1] - cam.cy) / cam.fy
        dirs = np.stack([xn, yn, np.ones_like(xn)], axis=-1) @ R
        t = (spec.plane_z - center[2]) / dirs[:, 2]
        hits = center + t[:, None] * dirs
        xs.extend(hits[:, 0])
        ys.extend(hits[:, 1])
    x0, x1 = min(xs), max(xs)
    y0, y1 = min(ys), max(ys)
    z = spec.plane_z
    vertices = np.array(
        [[x0, y0, z], [x1, y0, z], [x1, y1, z], [x0, y1, z]], dtype=np.float64
    )
    triangles = np.array([[0, 1, 2], [0, 2, 3]], dtype=np.int64)
    return TriangleMesh(vertices, triangles)


def _sphere_mesh(radius: float, slices: int = 64, stacks: int = 32) -> TriangleMesh:
    verts = [np.array([0.0, 0.0, radius]), np.array([0.0, 0.0, -radius])]
    rings = []
    for s in range(1, stacks):
        phi = math.pi * s / stacks
        ring = []
        for l in range(slices):
            th = 2 * math.pi * l / slices
            ring.append(len(verts))
            verts.append(
                radius
                * np.array(
                    [math.sin(phi) * math.cos(th), math.sin(phi) * math.sin(th),
                     math.cos(phi)]
                )
            )
        rings.append(ring)
    tris = []
    for l in range(slices):
        tris.append([0, rings[0][l], rings[0][(l + 1) % slices]])
        tris.append([1, rings[-1][(l + 1) % slices], rings[-1][l]])
    for s in range(len(rings) - 1):
        for l in range(slices):
            a, b = rings[s][l], rings[s][(l + 1) % slices]
            c, d = rings[s + 1][l], rings[s + 1][(l + 1) % slices]
            tris.append([a, b, d])
            tris.append([a, d, c])
    return TriangleMesh(np.stack(verts), np.asarray(tris, dtype=np.int64))


def _room_mesh(extents) -> TriangleMesh:
    hx, hy, hz = 0.5 * np.asarray(extents)
    corners = np.array(
        [
            [-hx, -hy, -hz], [hx, -hy, -hz], [hx, hy, -hz], [-hx, hy, -hz],
            [-hx, -hy, hz], [hx, -hy, hz], [hx, hy, hz], [-hx, hy, hz],
        ]
    )
    quads = [
        (0, 1, 2, 3), (4, 5, 6, 7), (0, 1, 5, 4),
        (2, 3, 7, 6), (1, 2, 6, 5), (3, 0, 4, 7),
    ]
    tris = []
    for a, b, c, d in quads:
        tris.append([a, b, c])
        tris.append([a, c, d])
    return TriangleMesh(corners, np.asarray(tris, dtype=np.int64))


def generate(spec: SceneSpec) -> SyntheticScene:
    """Build the scene: cameras, ground-truth depth, mesh, and sparse model.

    Sparse points are sampled without replacement from each view's valid
    ground-truth pixels, perturbed along z by noise_depth, and a recorded
    fraction replaced with gross errors planted strictly outside the global
    depth range. Tracks record true cross-view visibility (z-test against
    the ground truth); outliers keep single-view tracks.
    """
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    cam = _camera(spec)
    poses = _poses(spec)

    image_ids = list(range(1, spec.n_views + 1))
    gt_depths: dict[int, DenseDepthMap] = {}
    for iid, (qvec, tvec) in zip(image_ids, poses):
        depth = _ray_depths(spec, cam, qvec, tvec)
        gt_depths[iid] = DenseDepthMap.from_array(depth)

    all_values = np.concatenate(
        [gt_depths[i].depth[gt_depths[i].validity] for i in image_ids]
    )
    z_lo, z_hi = float(all_values.min()), float(all_values.max())

    rotations = {
        iid: quat_to_rotmat(q) for iid, (q, _) in zip(image_ids, poses)
    }

    # Per-image observation accumulators.
    obs_xy: dict[int, list[tuple[float, float]]] = {i: [] for i in image_ids}
    obs_pid: dict[int, list[int]] = {i: [] for i in image_ids}
    points: dict[int, ScenePoint] = {}
    outlier_ids: list[int] = []
    next_pid = 1

    n_pts = spec.sparse_points_per_view
    n_out = int(round(spec.outlier_fraction * n_pts))
    for iid in image_ids:
        if n_pts == 0:
            continue
        gt = gt_depths[iid]
        valid_flat = np.flatnonzero(gt.validity.reshape(-1))
        count = min(n_pts, valid_flat.size)
        chosen = rng.choice(valid_flat, size=count, replace=False)
        rows = chosen // cam.width
        cols = chosen % cam.width
        z = gt.depth[rows, cols].copy()
        if spec.noise_depth > 0:
            z = np.maximum(z + rng.normal(0.0, spec.noise_depth, count), 1e-3)
        is_outlier = np.zeros(count, dtype=bool)
        if n_out > 0:
            out_sel = rng.choice(count, size=min(n_out, count), replace=False)
            is_outlier[out_sel] = True
            high = rng.random(len(out_sel)) < 0.5
            z[out_sel] = np.where(
                high,
                rng.uniform(2.0 * z_hi, 4.0 * z_hi, len(out_sel)),
                rng.uniform(0.05 * z_lo, 0.5 * z_lo, len(out_sel)),
            )

        R = rotations[iid]
        xn = (cols - cam.cx) / cam.fx
        yn = (rows - cam.cy) / cam.fy
        pts_cam = np.stack([xn * z, yn * z, z], axis=-1)
        pts_world = (pts_cam - poses[iid - 1][1]) @ R

        for j in range(count):
            pid = next_pid
            next_pid += 1
            track_imgs = [iid]
            track_obs = [len(obs_xy[iid])]
            obs_xy[iid].append((float(cols[j]), float(rows[j])))
            obs_pid[iid].append(pid)
            if not is_outlier[j]:
                for other in image_ids:
                    if other == iid:
                        continue
                    pc = rotations[other] @ pts_world[j] + poses[other - 1][1]
                    if pc[2] <= 1e-9:
                        continue
                    u = cam.fx * pc[0] / pc[2] + cam.cx
                    v = cam.fy * pc[1] / pc[2] + cam.cy
                    ci, ri = int(np.rint(u)), int(np.rint(v))
                    if not (0 <= ci < cam.width and 0 <= ri < cam.height):
                        continue
                    gto = gt_depths[other]
                    if not gto.validity[ri, ci]:
                        continue
                    if pc[2] > gto.depth[ri, ci] * (1.0 + OCCLUSION_TOL):
                        continue  # occluded in that view
                    track_imgs.append(other)
                    track_obs.append(len(obs_xy[other]))
                    obs_xy[other].append((float(u), float(v)))
                    obs_pid[other].append(pid)
            else:
                outlier_ids.append(pid)
            points[pid] = ScenePoint(
                pid, pts_world[j], (128, 128, 128), 0.0, track_imgs, track_obs
            )

    images = {}
    for iid, (qvec, tvec) in zip(image_ids, poses):
        xys = np.asarray(obs_xy[iid], dtype=np.float64).reshape(-1, 2)
        pids = np.asarray(obs_pid[iid], dtype=np.int64)
        images[iid] = PosedImage(
            iid, 1, qvec, tvec, f"view_{iid:03d}.png", xys, pids
        )

    if spec.shape == PLANE:
        mesh = _plane_mesh(spec, poses, cam)
    elif spec.shape == SPHERE:
        mesh = _sphere_mesh(spec.radius)
    else:
        mesh = _room_mesh(spec.room_extents)

    model = SfmModel({1: cam}, images, points)
    model.validate()
    return SyntheticScene(
        spec, model, gt_depths, mesh, frozenset(outlier_ids), (z_lo, z_hi)
    )


def export_scene(scene: SyntheticScene, out_dir: Path) -> dict:
    """Write the scene in the pipeline's on-disk formats.

    Layout: model/ (COLMAP binary), gt_depth/<image_name>.depth.f32 (+ meta),
    gt_mesh.ply, scene.json with the spec and planted-outlier metadata.
    """
    out_dir = Path(out_dir)
    write_model(scene.model, out_dir / "model", format="binary")
    for iid, img in scene.model.images.items():
        gt = scene.gt_depths[iid]
        depth = np.where(gt.validity, gt.depth, np.nan)
        write_depth_raster(
            out_dir / "gt_depth" / f"{img.name}.depth.f32", depth, "metric"
        )
    write_mesh_ply(out_dir / "gt_mesh.ply", scene.gt_mesh.vertices,
                   scene.gt_mesh.triangles)
    manifest = {
        "spec": asdict(scene.spec),
        "outlier_point_ids": sorted(scene.outlier_point_ids),
        "depth_bounds": list(scene.depth_bounds),
        "images": {str(i): img.name for i, img in scene.model.images.items()},
    }
    (out_dir / "scene.json").write_text(json.dumps(manifest, indent=2) + "\n")
    return manifest
