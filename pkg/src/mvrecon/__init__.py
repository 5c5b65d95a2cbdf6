"""SfM-conditioned dense depth alignment and fusion for multi-view reconstruction."""

from .alignment import (
    AffineDepthModel,
    AlignmentConfig,
    align_view,
    fit_least_squares,
    fit_ransac,
)
from .conditioning import (
    ConditioningBundle,
    NormalizationRange,
    build_bundle,
    compute_range,
    denormalize,
    densify_knn,
    distance_map,
    downsample_distance_map,
    normalize,
)
from .evaluation import MetricsReport, chamfer, depth_rmse, fscore, sample_mesh
from .fusion import (
    FusedPointCloud,
    TriangleMesh,
    TsdfVolume,
    auto_volume,
    extract_mesh,
    fuse_point_cloud,
    integrate,
)
from .geometry import (
    SparseDepthMap,
    project,
    render_sparse_depth,
    world_to_camera,
)
from .providers import (
    DenseDepthMap,
    DepthProvider,
    ProviderSpec,
    ensemble_median,
    make_provider,
)
from .sfm_io import (
    CameraIntrinsics,
    PosedImage,
    ScenePoint,
    SfmModel,
    read_model,
    write_model,
)
from .synthscene import SceneSpec, SyntheticScene, generate

__version__ = "0.1.0"

__all__ = [
    "AffineDepthModel",
    "AlignmentConfig",
    "CameraIntrinsics",
    "ConditioningBundle",
    "DenseDepthMap",
    "DepthProvider",
    "FusedPointCloud",
    "MetricsReport",
    "NormalizationRange",
    "PosedImage",
    "ProviderSpec",
    "SceneSpec",
    "ScenePoint",
    "SfmModel",
    "SparseDepthMap",
    "SyntheticScene",
    "TriangleMesh",
    "TsdfVolume",
    "align_view",
    "auto_volume",
    "build_bundle",
    "chamfer",
    "compute_range",
    "denormalize",
    "densify_knn",
    "depth_rmse",
    "distance_map",
    "downsample_distance_map",
    "ensemble_median",
    "extract_mesh",
    "fit_least_squares",
    "fit_ransac",
    "fscore",
    "fuse_point_cloud",
    "generate",
    "integrate",
    "make_provider",
    "normalize",
    "project",
    "read_model",
    "render_sparse_depth",
    "sample_mesh",
    "world_to_camera",
    "write_model",
]
