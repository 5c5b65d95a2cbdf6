"""Pluggable dense depth sources.

The neural estimator is external to this package; everything downstream
talks to a DepthProvider. FromFilesProvider replays stored predictions,
SyntheticOracleProvider corrupts registered ground truth with a planted
affine map plus multiplicative noise (which alignment must undo),
ConstantProvider fills a constant, and DensifiedPassthroughProvider echoes
the conditioning bundle itself (a zeroth-order stand-in for the estimator,
used to exercise the densification ablation).
"""

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .conditioning import ConditioningBundle
from .errors import (
    DomainMismatch,
    MissingPrediction,
    NoGroundTruth,
    ShapeMismatch,
)
from .fileio import read_depth_raster

METRIC = "metric"
NORMALIZED = "normalized"


@dataclass
class DenseDepthMap:
    """Dense per-pixel depth with validity mask.

    scale_domain is "metric" (strictly positive scene units) or
    "normalized" (values in [-1, 1] under some NormalizationRange).
    """

    width: int
    height: int
    depth: np.ndarray
    validity: np.ndarray
    scale_domain: str = METRIC

    @staticmethod
    def from_array(
        depth: np.ndarray,
        validity: np.ndarray | None = None,
        scale_domain: str = METRIC,
    ) -> "DenseDepthMap":
        depth = np.asarray(depth, dtype=np.float64)
        if validity is None:
            validity = np.isfinite(depth)
            if scale_domain == METRIC:
                validity = validity & (depth > 0)
        return DenseDepthMap(
            depth.shape[1], depth.shape[0], depth, np.asarray(validity, bool), scale_domain
        )

    def valid_count(self) -> int:
        return int(np.count_nonzero(self.validity))


@dataclass(frozen=True)
class ProviderSpec:
    """Declarative provider selection; parameters are kind-specific."""

    kind: str  # from_files | synthetic_oracle | constant | densified
    directory: str | None = None
    sigma_mult: float = 0.0
    scale: float = 1.0
    shift: float = 0.0
    seed: int = 0
    constant: float = 1.0

    def __post_init__(self):
        if self.sigma_mult < 0:
            raise ValueError("sigma_mult must be >= 0")
        if self.scale <= 0:
            raise ValueError("scale must be > 0")


class DepthProvider:
    """Provider interface: one dense depth map per (view, sample)."""

    def predict(
        self,
        image_id: int,
        bundle: ConditioningBundle | None = None,
        rgb: np.ndarray | None = None,
        sample: int = 0,
    ) -> DenseDepthMap:
        raise NotImplementedError


class FromFilesProvider(DepthProvider):
    """Replays `<dir>/<image_name>.depth.f32` + `<image_name>.meta.json`."""

    def __init__(self, directory: Path, image_names: dict[int, str]):
        self.directory = Path(directory)
        self.image_names = dict(image_names)

    def predict(self, image_id, bundle=None, rgb=None, sample=0):
        name = self.image_names.get(image_id)
        if name is None:
            raise MissingPrediction(f"no image name registered for view {image_id}")
        path = self.directory / f"{name}.depth.f32"
        if not path.is_file():
            raise MissingPrediction(f"view {image_id}: {path} not found")
        depth, meta = read_depth_raster(path)
        return DenseDepthMap.from_array(depth, scale_domain=meta.get("scale_domain", METRIC))


class SyntheticOracleProvider(DepthProvider):
    """Ground truth under a planted affine corruption and per-pixel noise.

    Emits gt * (1 + eps) * scale + shift with eps ~ N(0, sigma_mult^2),
    bit-reproducible for a fixed (seed, view, sample).
    """

    def __init__(self, spec: ProviderSpec, gt_depths: dict[int, DenseDepthMap]):
        self.spec = spec
        self.gt_depths = dict(gt_depths)

    def predict(self, image_id, bundle=None, rgb=None, sample=0):
        gt = self.gt_depths.get(image_id)
        if gt is None:
            raise NoGroundTruth(f"no ground truth registered for view {image_id}")
        depth = gt.depth.copy()
        if self.spec.sigma_mult > 0:
            rng = np.random.default_rng([self.spec.seed, int(image_id), int(sample)])
            eps = rng.normal(0.0, self.spec.sigma_mult, size=depth.shape)
            depth = depth * (1.0 + eps)
        depth = depth * self.spec.scale + self.spec.shift
        validity = gt.validity & (depth > 0)
        out = np.where(validity, depth, 0.0)
        return DenseDepthMap(gt.width, gt.height, out, validity, METRIC)


class ConstantProvider(DepthProvider):
    """Constant depth everywhere; shape taken from the conditioning bundle."""

    def __init__(self, value: float):
        self.value = float(value)

    def predict(self, image_id, bundle=None, rgb=None, sample=0):
        if bundle is None:
            raise MissingPrediction("constant provider needs a bundle for the shape")
        h, w = bundle.densified_depth.shape
        depth = np.full((h, w), self.value, dtype=np.float64)
        return DenseDepthMap(w, h, depth, np.ones((h, w), bool), METRIC)


class DensifiedPassthroughProvider(DepthProvider):
    """Returns the normalized densified conditioning as the prediction."""

    def predict(self, image_id, bundle=None, rgb=None, sample=0):
        if bundle is None:
            raise MissingPrediction("passthrough provider needs a conditioning bundle")
        depth = bundle.densified_depth.astype(np.float64).copy()
        h, w = depth.shape
        return DenseDepthMap(w, h, depth, np.ones((h, w), bool), NORMALIZED)


def make_provider(
    spec: ProviderSpec,
    image_names: dict[int, str] | None = None,
    gt_depths: dict[int, DenseDepthMap] | None = None,
) -> DepthProvider:
    """Instantiate the provider named by a ProviderSpec."""
    if spec.kind == "from_files":
        if spec.directory is None:
            raise ValueError("from_files provider needs a directory")
        return FromFilesProvider(Path(spec.directory), image_names or {})
    if spec.kind == "synthetic_oracle":
        return SyntheticOracleProvider(spec, gt_depths or {})
    if spec.kind == "constant":
        return ConstantProvider(spec.constant)
    if spec.kind == "densified":
        return DensifiedPassthroughProvider()
    raise ValueError(f"unknown provider kind {spec.kind!r}")


def ensemble_median(maps: list[DenseDepthMap]) -> DenseDepthMap:
    """Pixel-wise median over an ensemble of predictions.

    A pixel stays valid when valid in at least ceil(n/2) inputs; its value
    is the median of the valid samples (mean of the central two for even
    counts).

    Raises:
        ShapeMismatch / DomainMismatch: inputs disagree on shape or domain.
    """
    if not maps:
        raise ShapeMismatch("ensemble needs at least one map")
    w, h, domain = maps[0].width, maps[0].height, maps[0].scale_domain
    for m in maps[1:]:
        if (m.width, m.height) != (w, h):
            raise ShapeMismatch("ensemble maps differ in shape")
        if m.scale_domain != domain:
            raise DomainMismatch("ensemble maps differ in scale domain")
    n = len(maps)
    if n == 1:
        m = maps[0]
        return DenseDepthMap(w, h, m.depth.copy(), m.validity.copy(), domain)
    stack = np.stack([np.where(m.validity, m.depth, np.nan) for m in maps])
    counts = np.stack([m.validity for m in maps]).sum(axis=0)
    validity = counts >= math.ceil(n / 2)
    with np.errstate(all="ignore"):
        med = np.nanmedian(stack, axis=0)
    depth = np.where(validity, med, 0.0)
    return DenseDepthMap(w, h, depth, validity, domain)
