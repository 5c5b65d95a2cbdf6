"""Request/response models for the reconstruction service API.

Requests carry a full PipelineConfig (paths are resolved on the server's
filesystem); responses are summaries of what each stage wrote.
"""

from pydantic import BaseModel, ConfigDict, Field

from ..config import PipelineConfig


class StageRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    config: PipelineConfig


class StageResponse(BaseModel):
    stage: str
    views: list[str] | None = None
    output_dir: str | None = None
    elapsed_s: float


class AlignmentEntry(BaseModel):
    image: str
    method: str
    scale: float
    shift: float
    inliers: int
    pairs: int


class AlignResponse(StageResponse):
    alignment: list[AlignmentEntry]


class FuseResponse(StageResponse):
    mode: str
    mesh: str | None = None
    points: str | None = None
    vertices: int | None = None
    triangles: int | None = None
    count: int | None = None
    voxel_size: float | None = None
    dims: list[int] | None = None


class EvaluateResponse(StageResponse):
    metrics: dict
    metrics_path: str
    gates_passed: bool


class ReconstructResponse(BaseModel):
    stage: str
    elapsed_s: float
    gates_passed: bool
    fused: dict | None = None
    metrics: dict | None = None
    alignment: list[AlignmentEntry] | None = None
    stages: list[dict]


class SynthRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    output_dir: str
    shape: str = "plane"
    plane_z: float = 2.0
    radius: float = 1.0
    room_extents: tuple[float, float, float] = (4.0, 4.0, 2.5)
    n_views: int = Field(8, ge=1)
    trajectory: str = "orbit"
    image_width: int = Field(64, ge=4)
    image_height: int = Field(64, ge=4)
    sparse_points_per_view: int = Field(200, ge=0)
    outlier_fraction: float = Field(0.0, ge=0.0, lt=1.0)
    noise_depth: float = Field(0.0, ge=0.0)
    seed: int = 0
    fov_deg: float = 60.0
    cam_distance: float | None = None


class SynthResponse(BaseModel):
    stage: str
    output_dir: str
    views: int
    points: int
    outliers: int
    depth_bounds: list[float]


class HealthResponse(BaseModel):
    status: str
    service: str
    version: str


class ErrorResponse(BaseModel):
    error: str
    detail: str
