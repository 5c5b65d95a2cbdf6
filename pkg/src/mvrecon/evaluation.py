"""Reconstruction quality metrics.

Chamfer distance is reported as the mean (not sum) of accuracy and
completeness, in scene units. F-score uses a fixed distance threshold
(default 0.05 scene units). Nearest-neighbor queries go through a KD-tree
and are exact; the test suite cross-checks them against brute force.
"""

import json
from dataclasses import asdict, dataclass

import numpy as np
from scipy.spatial import cKDTree

from .errors import EmptyMesh, EmptyPointSet, NoOverlap


@dataclass
class MetricsReport:
    chamfer: float
    accuracy: float
    completeness: float
    fscore: float
    precision: float
    recall: float
    threshold: float
    depth_rmse: float | None = None
    pred_count: int = 0
    gt_count: int = 0
    rmse_pixel_count: int = 0

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"

    def to_table(self) -> str:
        rows = [
            ("chamfer", self.chamfer),
            ("accuracy", self.accuracy),
            ("completeness", self.completeness),
            ("fscore", self.fscore),
            ("precision", self.precision),
            ("recall", self.recall),
        ]
        if self.depth_rmse is not None:
            rows.append(("depth_rmse", self.depth_rmse))
        width = max(len(k) for k, _ in rows)
        return "\n".join(f"{k:<{width}}  {v:.6f}" for k, v in rows)


def _nearest_distances(queries: np.ndarray, targets: np.ndarray) -> np.ndarray:
    tree = cKDTree(targets)
    dist, _ = tree.query(queries, k=1)
    return np.asarray(dist, dtype=np.float64).reshape(-1)


def chamfer(pred: np.ndarray, gt: np.ndarray) -> tuple[float, float, float]:
    """(chamfer, accuracy, completeness) between two point sets.

    accuracy is the mean pred-to-gt nearest distance, completeness the mean
    gt-to-pred nearest distance, chamfer their mean.

    Raises:
        EmptyPointSet: either set is empty.
    """
    pred = np.asarray(pred, dtype=np.float64).reshape(-1, 3)
    gt = np.asarray(gt, dtype=np.float64).reshape(-1, 3)
    if len(pred) == 0 or len(gt) == 0:
        raise EmptyPointSet("chamfer needs two non-empty point sets")
    accuracy = float(_nearest_distances(pred, gt).mean())
    completeness = float(_nearest_distances(gt, pred).mean())
    return (accuracy + completeness) / 2.0, accuracy, completeness


def fscore(
    pred: np.ndarray, gt: np.ndarray, tau: float = 0.05
) -> tuple[float, float, float]:
    """(fscore, precision, recall) at distance threshold tau."""
    pred = np.asarray(pred, dtype=np.float64).reshape(-1, 3)
    gt = np.asarray(gt, dtype=np.float64).reshape(-1, 3)
    if len(pred) == 0 or len(gt) == 0:
        raise EmptyPointSet("fscore needs two non-empty point sets")
    if tau <= 0:
        raise ValueError("tau must be positive")
    precision = float((_nearest_distances(pred, gt) < tau).mean())
    recall = float((_nearest_distances(gt, pred) < tau).mean())
    f = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return f, precision, recall


def depth_rmse(
    pred_depth: np.ndarray,
    pred_valid: np.ndarray,
    ref_depth: np.ndarray,
    ref_valid: np.ndarray,
) -> tuple[float, int]:
    """RMSE over jointly valid pixels; returns (rmse, pixel_count).

    Raises:
        NoOverlap: shapes differ or no pixel is valid in both maps.
    """
    pred_depth = np.asarray(pred_depth, dtype=np.float64)
    ref_depth = np.asarray(ref_depth, dtype=np.float64)
    if pred_depth.shape != ref_depth.shape:
        raise NoOverlap(
            f"shape mismatch {pred_depth.shape} vs {ref_depth.shape}"
        )
    both = np.asarray(pred_valid, bool) & np.asarray(ref_valid, bool)
    n = int(np.count_nonzero(both))
    if n == 0:
        raise NoOverlap("no jointly valid pixel")
    diff = pred_depth[both] - ref_depth[both]
    return float(np.sqrt(np.mean(diff * diff))), n


def triangle_areas(vertices: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    v = np.asarray(vertices, dtype=np.float64)
    t = np.asarray(triangles, dtype=np.int64).reshape(-1, 3)
    a = v[t[:, 1]] - v[t[:, 0]]
    b = v[t[:, 2]] - v[t[:, 0]]
    return 0.5 * np.linalg.norm(np.cross(a, b), axis=1)


def sample_mesh(
    vertices: np.ndarray, triangles: np.ndarray, n: int, seed: int = 0
) -> np.ndarray:
    """Area-weighted uniform surface samples, deterministic under seed.

    Raises:
        EmptyMesh: no triangles or zero total area.
    """
    if n == 0:
        return np.zeros((0, 3), dtype=np.float64)
    v = np.asarray(vertices, dtype=np.float64)
    t = np.asarray(triangles, dtype=np.int64).reshape(-1, 3)
    if len(t) == 0:
        raise EmptyMesh("cannot sample an empty mesh")
    areas = triangle_areas(v, t)
    total = areas.sum()
    if total <= 0:
        raise EmptyMesh("mesh has zero surface area")
    rng = np.random.default_rng(seed)
    chosen = rng.choice(len(t), size=n, p=areas / total)
    u = rng.random(n)
    w = rng.random(n)
    flip = u + w > 1.0
    u[flip] = 1.0 - u[flip]
    w[flip] = 1.0 - w[flip]
    p0 = v[t[chosen, 0]]
    p1 = v[t[chosen, 1]]
    p2 = v[t[chosen, 2]]
    return p0 + u[:, None] * (p1 - p0) + w[:, None] * (p2 - p0)
