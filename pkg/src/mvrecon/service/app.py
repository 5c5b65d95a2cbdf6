"""FastAPI service wrapping the reconstruction pipeline.

Every stage is a POST endpoint taking a PipelineConfig; paths in the config
refer to the server's filesystem. Run with:

    uvicorn mvrecon.service.app:app --host 0.0.0.0 --port 8000
"""

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from .. import __version__, pipeline
from ..errors import (
    BrokenReference,
    MalformedRecord,
    MissingFile,
    MissingPrediction,
    MvreconError,
    NoGroundTruth,
    UnknownImage,
)
from ..synthscene import SceneSpec
from .schemas import (
    AlignResponse,
    EvaluateResponse,
    FuseResponse,
    HealthResponse,
    ReconstructResponse,
    StageRequest,
    StageResponse,
    SynthRequest,
    SynthResponse,
)

app = FastAPI(title="mvrecon", version=__version__)

_NOT_FOUND = (MissingFile, MissingPrediction, NoGroundTruth, UnknownImage)
_BAD_INPUT = (MalformedRecord, BrokenReference)


@app.exception_handler(MvreconError)
async def mvrecon_error_handler(request: Request, exc: MvreconError):
    if isinstance(exc, _NOT_FOUND):
        status = 404
    elif isinstance(exc, _BAD_INPUT):
        status = 400
    else:
        status = 422
    return JSONResponse(
        status_code=status,
        content={"error": type(exc).__name__, "detail": str(exc)},
    )


@app.get("/health", response_model=HealthResponse)
def health() -> HealthResponse:
    return HealthResponse(status="ok", service="mvrecon", version=__version__)


@app.post("/project", response_model=StageResponse)
def project(req: StageRequest):
    return pipeline.run_project(req.config)


@app.post("/condition", response_model=StageResponse)
def condition(req: StageRequest):
    return pipeline.run_condition(req.config)


@app.post("/predict", response_model=StageResponse)
def predict(req: StageRequest):
    return pipeline.run_predict(req.config)


@app.post("/align", response_model=AlignResponse)
def align(req: StageRequest):
    return pipeline.run_align(req.config)


@app.post("/fuse", response_model=FuseResponse)
def fuse(req: StageRequest):
    return pipeline.run_fuse(req.config)


@app.post("/evaluate", response_model=EvaluateResponse)
def evaluate(req: StageRequest):
    return pipeline.run_evaluate(req.config)


@app.post("/reconstruct", response_model=ReconstructResponse)
def reconstruct(req: StageRequest):
    return pipeline.run_reconstruct(req.config)


@app.post("/synth", response_model=SynthResponse)
def synth(req: SynthRequest):
    spec = SceneSpec(
        shape=req.shape,
        plane_z=req.plane_z,
        radius=req.radius,
        room_extents=tuple(req.room_extents),
        n_views=req.n_views,
        trajectory=req.trajectory,
        image_size=(req.image_width, req.image_height),
        sparse_points_per_view=req.sparse_points_per_view,
        outlier_fraction=req.outlier_fraction,
        noise_depth=req.noise_depth,
        seed=req.seed,
        fov_deg=req.fov_deg,
        cam_distance=req.cam_distance,
    )
    return pipeline.run_synth(spec, req.output_dir)
