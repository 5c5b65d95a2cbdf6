"""Fusing aligned per-view depth into geometry.

Two routes: KinectFusion-style TSDF integration over a dense voxel grid
with marching-cubes extraction, and direct back-projection with multi-view
consistency filtering (Fusibile-style). Voxel centers sit at
origin + (index + 0.5) * voxel_size. Signed distance is measured along the
camera z axis: voxels in front of the observed surface are positive.
"""

from dataclasses import dataclass

import numpy as np
from scipy import ndimage
from skimage import measure

from .errors import EmptyVolume, TooFewViews
from .geometry import (
    backproject,
    camera_to_world,
    in_bounds,
    project_points,
    world_to_camera,
)
from .providers import DenseDepthMap
from .sfm_io import CameraIntrinsics, PosedImage, SfmModel


@dataclass
class TriangleMesh:
    vertices: np.ndarray  # (V, 3) float64
    triangles: np.ndarray  # (F, 3) int64
    normals: np.ndarray | None = None

    def is_empty(self) -> bool:
        return len(self.triangles) == 0

    @staticmethod
    def empty() -> "TriangleMesh":
        return TriangleMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))


@dataclass
class FusedPointCloud:
    points: np.ndarray  # (N, 3) float64
    support: np.ndarray  # (N,) number of other views agreeing


@dataclass
class TsdfVolume:
    """Dense truncated signed distance volume with per-voxel weights."""

    origin: np.ndarray  # (3,)
    voxel_size: float
    dims: tuple[int, int, int]
    truncation: float
    tsdf: np.ndarray  # dims, float32-compatible values in [-1, 1]
    weight: np.ndarray  # dims, >= 0

    @staticmethod
    def create(
        origin: np.ndarray,
        voxel_size: float,
        dims: tuple[int, int, int],
        truncation: float | None = None,
    ) -> "TsdfVolume":
        if truncation is None:
            truncation = 4.0 * voxel_size
        if truncation < voxel_size:
            raise ValueError("truncation must be >= voxel_size")
        dims = tuple(int(d) for d in dims)
        return TsdfVolume(
            np.asarray(origin, dtype=np.float64),
            float(voxel_size),
            dims,
            float(truncation),
            np.zeros(dims, dtype=np.float64),
            np.zeros(dims, dtype=np.float64),
        )

    def voxel_centers(self) -> np.ndarray:
        """(N, 3) world positions of all voxel centers, x fastest-varying last."""
        nx, ny, nz = self.dims
        ix, iy, iz = np.meshgrid(
            np.arange(nx), np.arange(ny), np.arange(nz), indexing="ij"
        )
        idx = np.stack([ix, iy, iz], axis=-1).reshape(-1, 3).astype(np.float64)
        return self.origin + (idx + 0.5) * self.voxel_size


def auto_volume(
    model: SfmModel,
    voxel_budget: int = 128**3,
    truncation_factor: float = 4.0,
    bbox_trim: float = 0.02,
    bbox_pad: float = 0.05,
) -> TsdfVolume:
    """Size a voxel grid from the SfM point cloud.

    Per-axis percentile trimming rejects stray points, the box is padded by
    a fraction of the largest extent (which also gives flat scenes some
    thickness), and the voxel size is chosen so the grid stays within the
    voxel budget.
    """
    if not model.points:
        raise EmptyVolume("cannot size a volume from a model without points")
    xyz = np.stack([p.xyz for p in model.points.values()])
    lo = np.percentile(xyz, 100 * bbox_trim, axis=0)
    hi = np.percentile(xyz, 100 * (1 - bbox_trim), axis=0)
    extent = hi - lo
    pad = bbox_pad * float(extent.max())
    if pad <= 0:
        raise EmptyVolume("SfM point cloud is degenerate (zero extent)")
    lo = lo - pad
    hi = hi + pad
    extent = hi - lo
    voxel = float((extent.prod() / voxel_budget) ** (1.0 / 3.0))
    dims = tuple(int(np.ceil(e / voxel)) for e in extent)
    return TsdfVolume.create(lo, voxel, dims, truncation_factor * voxel)


def integrate(
    volume: TsdfVolume,
    depth: DenseDepthMap,
    cam: CameraIntrinsics,
    pose: PosedImage,
    max_weight: float = 64.0,
) -> TsdfVolume:
    """Integrate one view into the volume (in place) and return it.

    For every voxel center that projects onto a valid depth pixel, the
    signed distance s = d - z_voxel is clamped to the truncation band and
    merged by a weighted running average with unit sample weight; weights
    cap at max_weight. Voxels more than one truncation behind the surface
    are left untouched.
    """
    centers = volume.voxel_centers()
    cam_pts = world_to_camera(pose, centers)
    uv, in_front = project_points(cam, cam_pts)
    ok = in_front & in_bounds(cam, uv)

    cols = np.rint(uv[ok, 0]).astype(np.int64)
    rows = np.rint(uv[ok, 1]).astype(np.int64)
    has_depth = depth.validity[rows, cols]
    sel = np.flatnonzero(ok)[has_depth]
    if sel.size == 0:
        return volume

    d = depth.depth[rows[has_depth], cols[has_depth]]
    s = d - cam_pts[sel, 2]
    keep = s > -volume.truncation
    sel = sel[keep]
    sample = np.clip(s[keep] / volume.truncation, -1.0, 1.0)

    tsdf = volume.tsdf.reshape(-1)
    weight = volume.weight.reshape(-1)
    w = weight[sel]
    tsdf[sel] = (tsdf[sel] * w + sample) / (w + 1.0)
    weight[sel] = np.minimum(w + 1.0, max_weight)
    return volume


def extract_mesh(volume: TsdfVolume) -> TriangleMesh:
    """Marching cubes at the TSDF zero crossing, restricted to observed voxels.

    Cubes touching any unobserved voxel are skipped. Returns an empty mesh
    when the field never changes sign.

    Raises:
        EmptyVolume: nothing was ever integrated.
    """
    observed = volume.weight > 0
    if not observed.any():
        raise EmptyVolume("volume has no observed voxels")
    tsdf = volume.tsdf
    if not (tsdf[observed].min() < 0.0 < tsdf[observed].max() or
            np.any(tsdf[observed] == 0.0)):
        return TriangleMesh.empty()
    # skimage probes the mask at a single voxel per cube, not at all eight
    # corners; eroding by the full 3x3x3 box guarantees that any probed
    # voxel implies a fully observed cube, so no vertex ever interpolates
    # into the unobserved (tsdf = 0) region.
    mask = ndimage.binary_erosion(observed, structure=np.ones((3, 3, 3), bool))
    if not mask.any():
        return TriangleMesh.empty()
    try:
        verts, faces, normals, _ = measure.marching_cubes(
            tsdf, level=0.0, spacing=(volume.voxel_size,) * 3, mask=mask
        )
    except (ValueError, RuntimeError):
        return TriangleMesh.empty()
    if len(verts) == 0 or len(faces) == 0:
        return TriangleMesh.empty()
    vertices = verts.astype(np.float64) + volume.origin + 0.5 * volume.voxel_size
    return TriangleMesh(vertices, faces.astype(np.int64), normals.astype(np.float64))


_WINDOW_CACHE: dict[float, np.ndarray] = {}


def _window_offsets(pixel_tol: float) -> np.ndarray:
    """Integer pixel offsets within pixel_tol, nearest first (deterministic)."""
    key = round(float(pixel_tol), 9)
    if key not in _WINDOW_CACHE:
        r = int(np.floor(pixel_tol))
        offs = [
            (dy, dx)
            for dy in range(-r, r + 1)
            for dx in range(-r, r + 1)
            if dy * dy + dx * dx <= pixel_tol * pixel_tol
        ]
        offs.sort(key=lambda o: (o[0] * o[0] + o[1] * o[1], o[0], o[1]))
        _WINDOW_CACHE[key] = np.asarray(offs, dtype=np.int64).reshape(-1, 2)
    return _WINDOW_CACHE[key]


def fuse_point_cloud(
    depths: dict[int, DenseDepthMap],
    model: SfmModel,
    n_views: int = 1,
    pixel_tol: float = 1.0,
    depth_tol: float = 0.01,
) -> FusedPointCloud:
    """Back-project all valid pixels and keep the multi-view consistent ones.

    A candidate point survives when at least n_views other views see a
    pixel within pixel_tol whose depth matches the candidate's depth in
    that view within depth_tol (relative). Survivors are averaged with the
    agreeing back-projections of their supporting views.

    Raises:
        TooFewViews: fewer than n_views views supplied.
    """
    if len(depths) < n_views:
        raise TooFewViews(f"need >= {n_views} views, have {len(depths)}")
    view_ids = sorted(depths)
    offsets = _window_offsets(pixel_tol)

    # Per-view candidate points in world coordinates.
    candidates: dict[int, np.ndarray] = {}
    for vid in view_ids:
        dm = depths[vid]
        img = model.images[vid]
        cam = model.cameras[img.camera_id]
        rows, cols = np.nonzero(dm.validity)
        if rows.size == 0:
            candidates[vid] = np.zeros((0, 3))
            continue
        uv = np.column_stack([cols, rows]).astype(np.float64)
        pts_cam = backproject(cam, uv, dm.depth[rows, cols])
        candidates[vid] = camera_to_world(img, pts_cam)

    kept_points: list[np.ndarray] = []
    kept_support: list[np.ndarray] = []
    for vid in view_ids:
        pts = candidates[vid]
        if len(pts) == 0:
            continue
        support = np.zeros(len(pts), dtype=np.int64)
        accum = pts.copy()
        for other in view_ids:
            if other == vid:
                continue
            dm = depths[other]
            img = model.images[other]
            cam = model.cameras[img.camera_id]
            cam_pts = world_to_camera(img, pts)
            uv, in_front = project_points(cam, cam_pts)
            matched = np.zeros(len(pts), dtype=bool)
            match_pts = np.zeros_like(pts)
            base_col = np.rint(uv[:, 0]).astype(np.int64)
            base_row = np.rint(uv[:, 1]).astype(np.int64)
            for dy, dx in offsets:
                rows = base_row + dy
                cols = base_col + dx
                inside = (
                    in_front
                    & ~matched
                    & (rows >= 0)
                    & (rows < cam.height)
                    & (cols >= 0)
                    & (cols < cam.width)
                )
                if not inside.any():
                    continue
                # pixel-center distance check against the continuous projection
                du = cols[inside] - uv[inside, 0]
                dv = rows[inside] - uv[inside, 1]
                near = du * du + dv * dv <= pixel_tol * pixel_tol
                idx = np.flatnonzero(inside)[near]
                if idx.size == 0:
                    continue
                d_other = dm.depth[rows[idx], cols[idx]]
                valid = dm.validity[rows[idx], cols[idx]]
                z_here = cam_pts[idx, 2]
                agree = valid & (np.abs(d_other - z_here) <= depth_tol * z_here)
                idx = idx[agree]
                if idx.size == 0:
                    continue
                matched[idx] = True
                sub_uv = np.column_stack([cols[idx], rows[idx]]).astype(np.float64)
                sup_cam = backproject(cam, sub_uv, dm.depth[rows[idx], cols[idx]])
                match_pts[idx] = camera_to_world(img, sup_cam)
            support += matched
            accum[matched] += match_pts[matched]
        keep = support >= n_views
        if keep.any():
            kept_points.append(accum[keep] / (support[keep] + 1)[:, None])
            kept_support.append(support[keep])

    if kept_points:
        return FusedPointCloud(
            np.concatenate(kept_points), np.concatenate(kept_support)
        )
    return FusedPointCloud(np.zeros((0, 3)), np.zeros(0, dtype=np.int64))


def merge_volumes(a: TsdfVolume, b: TsdfVolume) -> TsdfVolume:
    """Commutative weighted-average merge of two partial volumes on one grid."""
    if a.dims != b.dims or a.voxel_size != b.voxel_size:
        raise ValueError("volumes live on different grids")
    w = a.weight + b.weight
    safe = np.where(w > 0, w, 1.0)
    tsdf = (a.tsdf * a.weight + b.tsdf * b.weight) / safe
    out = TsdfVolume(
        a.origin.copy(), a.voxel_size, a.dims, a.truncation, tsdf, w
    )
    return out
