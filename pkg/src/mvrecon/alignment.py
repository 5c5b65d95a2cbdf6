"""Robust scale-shift alignment of predicted depth against SfM sparse depth.

Fits d_sfm ~ scale * d_pred + shift per view, with RANSAC (default),
plain least squares, or pass-through. RANSAC samples minimal 2-point
models; when the number of candidate pairs is small enough, every pair is
enumerated instead of sampled, which makes the returned consensus provably
maximal. The winning inlier set gets a final least-squares refit.
"""

from dataclasses import dataclass
from itertools import combinations

import numpy as np

from .conditioning import NormalizationRange
from .errors import (
    DegenerateSamples,
    DomainMismatch,
    NoPositiveScaleModel,
    TooFewSamples,
)
from .geometry import SparseDepthMap
from .providers import DenseDepthMap

RANSAC = "ransac"
LEAST_SQUARES = "least_squares"
NO_ALIGNMENT = "none"


@dataclass(frozen=True)
class AffineDepthModel:
    """Fitted scale/shift with the consensus that produced it."""

    scale: float
    shift: float
    inlier_count: int
    inlier_threshold: float
    space: str = "depth"  # "depth" or "inverse_depth" fitting space

    @staticmethod
    def identity() -> "AffineDepthModel":
        return AffineDepthModel(1.0, 0.0, 0, 0.0)


@dataclass
class AlignmentConfig:
    """Knobs for the per-view fit; thresholds may be relative to the
    median sparse depth so configs survive scene-scale changes."""

    method: str = RANSAC
    iterations: int = 200
    inlier_threshold: float = 0.02
    threshold_is_relative: bool = True
    min_samples: int = 2
    seed: int = 0
    space: str = "depth"


def _absolute_threshold(cfg: AlignmentConfig, d_sfm: np.ndarray) -> float:
    if cfg.threshold_is_relative:
        return float(cfg.inlier_threshold * np.median(d_sfm))
    return float(cfg.inlier_threshold)


def fit_least_squares(pairs: np.ndarray, space: str = "depth") -> AffineDepthModel:
    """Ordinary least squares via the closed-form normal equations.

    Args:
        pairs: (N, 2) array of (d_pred, d_sfm) samples.

    Raises:
        TooFewSamples: fewer than two pairs.
        DegenerateSamples: all d_pred identical, slope undefined.
    """
    pairs = np.asarray(pairs, dtype=np.float64).reshape(-1, 2)
    if len(pairs) < 2:
        raise TooFewSamples(f"need >= 2 pairs, have {len(pairs)}")
    x, y = pairs[:, 0], pairs[:, 1]
    if space == "inverse_depth":
        x, y = 1.0 / x, 1.0 / y
    mx, my = x.mean(), y.mean()
    sxx = ((x - mx) ** 2).sum()
    if sxx == 0.0:
        raise DegenerateSamples("all predicted depths are equal")
    scale = float(((x - mx) * (y - my)).sum() / sxx)
    shift = float(my - scale * mx)
    residual = np.abs(scale * x + shift - y)
    thr = float(residual.max())
    return AffineDepthModel(scale, shift, len(pairs), thr, space)


def fit_ransac(pairs: np.ndarray, cfg: AlignmentConfig) -> AffineDepthModel:
    """Max-consensus scale-shift fit, least-squares refit on the inliers.

    Candidate models come from 2-point samples. All C(n, 2) pairs are
    enumerated when that is no more work than cfg.iterations random draws;
    otherwise sampling is driven by cfg.seed. Candidate models with a
    non-positive scale are discarded (depth orientation cannot flip).

    Raises:
        TooFewSamples / DegenerateSamples: not enough usable pairs.
        NoPositiveScaleModel: every candidate had scale <= 0.
    """
    pairs = np.asarray(pairs, dtype=np.float64).reshape(-1, 2)
    n = len(pairs)
    if n < cfg.min_samples:
        raise TooFewSamples(f"need >= {cfg.min_samples} pairs, have {n}")
    x, y = pairs[:, 0].copy(), pairs[:, 1].copy()
    if cfg.space == "inverse_depth":
        x, y = 1.0 / x, 1.0 / y
    if np.all(x == x[0]):
        raise DegenerateSamples("all predicted depths are equal")
    threshold = _absolute_threshold(cfg, pairs[:, 1])
    if cfg.space == "inverse_depth" and cfg.threshold_is_relative:
        threshold = float(cfg.inlier_threshold * np.median(y))

    if n * (n - 1) // 2 <= cfg.iterations:
        candidates = np.array(list(combinations(range(n), 2)), dtype=np.int64)
    else:
        rng = np.random.default_rng(cfg.seed)
        candidates = np.empty((cfg.iterations, 2), dtype=np.int64)
        for row in range(cfg.iterations):
            candidates[row] = rng.choice(n, size=2, replace=False)

    i, j = candidates[:, 0], candidates[:, 1]
    dx = x[j] - x[i]
    usable = dx != 0.0
    scales = np.where(usable, (y[j] - y[i]) / np.where(usable, dx, 1.0), 0.0)
    shifts = y[i] - scales * x[i]
    usable &= scales > 0.0
    if not np.any(usable):
        raise NoPositiveScaleModel("no candidate sample produced a positive scale")

    # residual matrix (candidates x pairs); chunk to bound memory
    best_count = -1
    best_idx = -1
    cand_rows = np.flatnonzero(usable)
    for start in range(0, len(cand_rows), 512):
        rows = cand_rows[start : start + 512]
        res = np.abs(scales[rows, None] * x[None, :] + shifts[rows, None] - y[None, :])
        counts = (res < threshold).sum(axis=1)
        local = int(np.argmax(counts))
        if counts[local] > best_count:
            best_count = int(counts[local])
            best_idx = int(rows[local])

    scale0, shift0 = float(scales[best_idx]), float(shifts[best_idx])
    inliers = np.abs(scale0 * x + shift0 - y) < threshold
    inlier_pairs = np.column_stack([x[inliers], y[inliers]])
    if len(inlier_pairs) >= 2 and not np.all(inlier_pairs[:, 0] == inlier_pairs[0, 0]):
        refit = fit_least_squares(inlier_pairs)
        scale, shift = refit.scale, refit.shift
    else:
        scale, shift = scale0, shift0
    if scale <= 0:
        raise NoPositiveScaleModel("refit produced a non-positive scale")
    return AffineDepthModel(scale, shift, int(best_count), threshold, cfg.space)


def apply(model: AffineDepthModel, depth: DenseDepthMap) -> DenseDepthMap:
    """Apply the fitted map per pixel; pixels driven <= 0 become invalid."""
    if model.space == "inverse_depth":
        with np.errstate(divide="ignore", invalid="ignore"):
            inv = model.scale / depth.depth + model.shift
            mapped = np.where(inv > 0, 1.0 / np.where(inv > 0, inv, 1.0), 0.0)
    else:
        mapped = model.scale * depth.depth + model.shift
    validity = depth.validity & (mapped > 0)
    out = np.where(validity, mapped, 0.0)
    return DenseDepthMap(depth.width, depth.height, out, validity, depth.scale_domain)


def gather_pairs(
    pred: DenseDepthMap,
    sparse: SparseDepthMap,
    range_filter: NormalizationRange | None = None,
) -> np.ndarray:
    """(d_pred, d_sfm) pairs at valued sparse pixels where pred is valid.

    With range_filter, sparse pixels outside [raw_min, raw_max] (the
    trimmed outliers) are excluded.
    """
    mask = sparse.mask & pred.validity
    if range_filter is not None:
        mask &= (sparse.depth >= range_filter.raw_min) & (
            sparse.depth <= range_filter.raw_max
        )
    return np.column_stack([pred.depth[mask], sparse.depth[mask]])


def align_view(
    pred: DenseDepthMap,
    sparse: SparseDepthMap,
    cfg: AlignmentConfig,
    range_filter: NormalizationRange | None = None,
) -> tuple[DenseDepthMap, AffineDepthModel]:
    """Fit and apply the per-view alignment; NoAlignment passes through.

    Raises:
        DomainMismatch: prediction is still in the normalized domain.
    """
    if pred.scale_domain != "metric":
        raise DomainMismatch("alignment needs metric-domain depth; "
                             "de-normalize the prediction first")
    if cfg.method == NO_ALIGNMENT:
        return pred, AffineDepthModel.identity()
    pairs = gather_pairs(pred, sparse, range_filter)
    if cfg.method == RANSAC:
        model = fit_ransac(pairs, cfg)
    elif cfg.method == LEAST_SQUARES:
        model = fit_least_squares(pairs, cfg.space)
    else:
        raise ValueError(f"unknown alignment method {cfg.method!r}")
    return apply(model, pred), model
