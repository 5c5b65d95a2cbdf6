"""Declarative pipeline configuration.

A single JSON document drives every stage; each ablation axis (alignment
method, densification k, distance map on/off, fusion mode, ensemble size)
is one field. CLI flags and the service API both marshal into these models.
"""

from typing import Literal

from pydantic import BaseModel, ConfigDict, Field

from .alignment import AlignmentConfig


class ConditioningSettings(BaseModel):
    model_config = ConfigDict(extra="forbid")

    k: int = Field(3, ge=0)
    trim_fraction: float = Field(0.02, ge=0.0, lt=0.5)
    expansion_low: float = Field(0.8, gt=0.0)
    expansion_high: float = Field(1.2, gt=0.0)
    distance_map: bool = True
    apply_trim: bool = True
    distance_on_pretrim: bool = False


class ProviderSettings(BaseModel):
    model_config = ConfigDict(extra="forbid")

    kind: Literal["from_files", "synthetic_oracle", "constant", "densified"] = (
        "from_files"
    )
    directory: str | None = None
    sigma_mult: float = Field(0.0, ge=0.0)
    scale: float = Field(1.0, gt=0.0)
    shift: float = 0.0
    seed: int = 0
    constant: float = 1.0
    ensemble_size: int = Field(1, ge=1)


class AlignmentSettings(BaseModel):
    model_config = ConfigDict(extra="forbid")

    method: Literal["ransac", "least_squares", "none"] = "ransac"
    iterations: int = Field(200, ge=1)
    inlier_threshold: float = Field(0.02, gt=0.0)
    threshold_is_relative: bool = True
    seed: int = 0
    space: Literal["depth", "inverse_depth"] = "depth"

    def to_core(self) -> AlignmentConfig:
        return AlignmentConfig(
            method=self.method,
            iterations=self.iterations,
            inlier_threshold=self.inlier_threshold,
            threshold_is_relative=self.threshold_is_relative,
            seed=self.seed,
            space=self.space,
        )


class FusionSettings(BaseModel):
    model_config = ConfigDict(extra="forbid")

    mode: Literal["tsdf", "point_cloud"] = "tsdf"
    voxel_budget: int = Field(128**3, ge=8)
    truncation_factor: float = Field(4.0, ge=1.0)
    max_weight: float = Field(64.0, ge=1.0)
    bbox_trim: float = Field(0.02, ge=0.0, lt=0.5)
    bbox_pad: float = Field(0.05, ge=0.0)
    consistency_views: int = Field(1, ge=0)
    consistency_pixel_tol: float = Field(1.0, gt=0.0)
    consistency_depth_tol: float = Field(0.01, gt=0.0)


class EvaluationSettings(BaseModel):
    model_config = ConfigDict(extra="forbid")

    gt_mesh: str | None = None
    gt_depth_dir: str | None = None
    tau: float = Field(0.05, gt=0.0)
    sample_count: int = Field(100_000, ge=1)
    seed: int = 0
    max_chamfer: float | None = None
    min_fscore: float | None = None
    max_depth_rmse: float | None = None


class PipelineConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    model_dir: str
    output_dir: str
    image_dir: str | None = None
    prediction_dir: str | None = None
    model_format: Literal["auto", "text", "binary"] = "auto"
    views: list[int] | None = None
    use_visibility: bool = True
    splat: Literal["observed", "reprojected"] = "observed"
    workers: int = Field(4, ge=1)
    seed: int = 0
    conditioning: ConditioningSettings = ConditioningSettings()
    provider: ProviderSettings = ProviderSettings()
    alignment: AlignmentSettings = AlignmentSettings()
    fusion: FusionSettings = FusionSettings()
    evaluation: EvaluationSettings = EvaluationSettings()
