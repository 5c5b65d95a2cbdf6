"""Per-view conditioning signals from sparse SfM depth.

Builds the robust normalization range (percentile trim then 0.8x/1.2x
expansion), the KNN inverse-distance densified depth, and the nearest-valued-
pixel Euclidean distance map. Normalized depth lives in [-1, 1].
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

from .errors import DegenerateRange, EmptySparseDepth, TooFewPoints
from .geometry import SparseDepthMap

EXPANSION_LOW = 0.8
EXPANSION_HIGH = 1.2


@dataclass(frozen=True)
class NormalizationRange:
    """Trimmed-and-expanded depth interval used to map depth to [-1, 1]."""

    d_min_adj: float
    d_max_adj: float
    raw_min: float
    raw_max: float

    def span(self) -> float:
        return self.d_max_adj - self.d_min_adj


@dataclass
class ConditioningBundle:
    """Everything a dense depth provider receives for one view."""

    densified_depth: np.ndarray  # (H, W), normalized to [-1, 1]
    distance_map: np.ndarray | None  # (H, W), pixels
    range: NormalizationRange
    k_used: int


def compute_range(
    sparse: SparseDepthMap,
    trim_fraction: float = 0.02,
    expansion: tuple[float, float] = (EXPANSION_LOW, EXPANSION_HIGH),
) -> NormalizationRange:
    """Robust depth range: sort, drop floor(trim*n) per end, expand min/max.

    Raises:
        EmptySparseDepth: no valued pixel.
        DegenerateRange: survivors span a zero-width interval.
    """
    values = np.sort(sparse.values())
    n = values.size
    if n == 0:
        raise EmptySparseDepth("cannot compute a range from an empty sparse map")
    drop = int(math.floor(trim_fraction * n))
    survivors = values[drop : n - drop] if drop > 0 else values
    raw_min = float(survivors[0])
    raw_max = float(survivors[-1])
    if raw_max <= raw_min:
        raise DegenerateRange(f"trimmed depth range is degenerate at {raw_min}")
    return NormalizationRange(
        expansion[0] * raw_min, expansion[1] * raw_max, raw_min, raw_max
    )


def trim_sparse(sparse: SparseDepthMap, range_: NormalizationRange) -> SparseDepthMap:
    """Drop valued pixels outside [raw_min, raw_max] (the outliers)."""
    keep = sparse.mask & (sparse.depth >= range_.raw_min) & (sparse.depth <= range_.raw_max)
    out = SparseDepthMap.empty(sparse.width, sparse.height)
    out.depth[keep] = sparse.depth[keep]
    out.source_point[keep] = sparse.source_point[keep]
    return out


def _valued_coords(sparse: SparseDepthMap) -> tuple[np.ndarray, np.ndarray]:
    """Valued pixel (row, col) coordinates in lexicographic order, plus depths."""
    coords = np.argwhere(sparse.mask)  # row-major, already lexicographic
    depths = sparse.depth[coords[:, 0], coords[:, 1]]
    return coords, depths


def _knn_brute(
    query: np.ndarray, coords: np.ndarray, k: int
) -> tuple[np.ndarray, np.ndarray]:
    """Exact k-nearest valued pixels with (distance, row, col) tie-breaking.

    Squared pixel distances are integers, so ties are exact; a stable sort
    over the lexicographically ordered coords resolves them.
    """
    d2 = (
        (query[:, None, 0] - coords[None, :, 0]) ** 2
        + (query[:, None, 1] - coords[None, :, 1]) ** 2
    )
    order = np.argsort(d2, axis=1, kind="stable")[:, :k]
    rows = np.arange(len(query))[:, None]
    return order, np.sqrt(d2[rows, order])


def densify_knn(sparse: SparseDepthMap, k: int) -> np.ndarray:
    """Fill empty pixels with the inverse-distance weighted mean of the k
    nearest valued pixels; valued pixels keep their value.

    k = 0 disables densification and returns the sparse depth with empty
    pixels encoded as 0. Ties at the kth distance are broken toward the
    smaller (row, col), which makes the output reproducible against a
    brute-force oracle.

    Raises:
        TooFewPoints: fewer than k valued pixels.
    """
    if k == 0:
        return sparse.depth.copy()
    coords, depths = _valued_coords(sparse)
    m = len(coords)
    if m < k:
        raise TooFewPoints(f"need {k} valued pixels, have {m}")

    out = sparse.depth.copy()
    empty = np.argwhere(~sparse.mask)
    if len(empty) == 0:
        return out

    tree = cKDTree(coords)
    # Query one extra neighbor to detect ties that straddle the k boundary.
    kq = min(k + 1, m)
    dist, idx = tree.query(empty.astype(np.float64), k=kq)
    dist = dist.reshape(len(empty), kq)
    idx = idx.reshape(len(empty), kq)

    if kq > k:
        d2 = np.rint(dist**2).astype(np.int64)
        ambiguous = d2[:, k] == d2[:, k - 1]
    else:
        ambiguous = np.zeros(len(empty), dtype=bool)

    sel_idx = idx[:, :k].copy()
    sel_dist = dist[:, :k].copy()
    if np.any(ambiguous):
        amb = np.flatnonzero(ambiguous)
        # Exact fallback for boundary ties; rare on scattered data.
        for start in range(0, len(amb), 4096):
            chunk = amb[start : start + 4096]
            order, d = _knn_brute(empty[chunk], coords, k)
            sel_idx[chunk] = order
            sel_dist[chunk] = d

    # Canonical (distance, lexicographic) neighbor order so the weighted sum
    # accumulates identically to the all-pairs oracle.
    d2i = np.rint(sel_dist**2).astype(np.int64)
    key = d2i * np.int64(m) + sel_idx
    order = np.argsort(key, axis=1, kind="stable")
    sel_idx = np.take_along_axis(sel_idx, order, axis=1)
    sel_dist = np.take_along_axis(sel_dist, order, axis=1)

    # Empty pixels are at least one pixel away from any valued pixel.
    assert np.all(sel_dist > 0)
    weights = 1.0 / sel_dist
    values = depths[sel_idx]
    out[empty[:, 0], empty[:, 1]] = (values * weights).sum(axis=1) / weights.sum(axis=1)
    return out


def distance_map(sparse: SparseDepthMap) -> np.ndarray:
    """Exact Euclidean distance from each pixel to the nearest valued pixel.

    Raises:
        EmptySparseDepth: no valued pixel to measure against.
    """
    if sparse.valued_count() == 0:
        raise EmptySparseDepth("distance map needs at least one valued pixel")
    return ndimage.distance_transform_edt(~sparse.mask)


def normalize(depth: np.ndarray, range_: NormalizationRange) -> np.ndarray:
    """Affine-map depth into [-1, 1] over the adjusted range, clamped."""
    span = range_.span()
    if span <= 0:
        raise DegenerateRange("normalization range has non-positive span")
    norm = 2.0 * (np.asarray(depth, dtype=np.float64) - range_.d_min_adj) / span - 1.0
    return np.clip(norm, -1.0, 1.0)


def denormalize(norm_depth: np.ndarray, range_: NormalizationRange) -> np.ndarray:
    """Inverse of normalize on [-1, 1], back to scene units.

    Written as a convex combination of the endpoints, which maps -1 and 1
    to d_min_adj and d_max_adj exactly.
    """
    if range_.span() <= 0:
        raise DegenerateRange("normalization range has non-positive span")
    w = (np.asarray(norm_depth, dtype=np.float64) + 1.0) / 2.0
    return (1.0 - w) * range_.d_min_adj + w * range_.d_max_adj


def downsample_distance_map(dist: np.ndarray, factor: int) -> np.ndarray:
    """Area-average downsampling by an integer factor.

    When the factor does not divide a dimension, the map is edge-padded to
    the next multiple before averaging, so the output covers ceil(H/f) by
    ceil(W/f) cells.
    """
    if factor <= 1:
        return np.asarray(dist, dtype=np.float64).copy()
    arr = np.asarray(dist, dtype=np.float64)
    h, w = arr.shape
    ph = (-h) % factor
    pw = (-w) % factor
    if ph or pw:
        arr = np.pad(arr, ((0, ph), (0, pw)), mode="edge")
    hh, ww = arr.shape
    return arr.reshape(hh // factor, factor, ww // factor, factor).mean(axis=(1, 3))


def build_bundle(
    sparse: SparseDepthMap,
    k: int = 3,
    trim_fraction: float = 0.02,
    expansion: tuple[float, float] = (EXPANSION_LOW, EXPANSION_HIGH),
    with_distance_map: bool = True,
    apply_trim: bool = True,
    distance_on_pretrim: bool = False,
) -> ConditioningBundle:
    """Assemble the full conditioning bundle for one view.

    Outlier pixels outside the trimmed range are removed before
    densification; distance_on_pretrim keeps them for the distance map only
    (ablation of where trimming happens).
    """
    range_ = compute_range(sparse, trim_fraction, expansion)
    working = trim_sparse(sparse, range_) if apply_trim else sparse
    densified = densify_knn(working, k)
    norm = normalize(densified, range_) if k > 0 else _normalize_sparse(working, range_)
    dist = None
    if with_distance_map:
        dist_source = sparse if distance_on_pretrim else working
        dist = distance_map(dist_source)
    return ConditioningBundle(norm, dist, range_, k)


def _normalize_sparse(sparse: SparseDepthMap, range_: NormalizationRange) -> np.ndarray:
    """Normalize only the valued pixels of a k=0 map; empty pixels stay 0."""
    out = np.zeros_like(sparse.depth)
    mask = sparse.mask
    out[mask] = normalize(sparse.depth[mask], range_)
    return out
