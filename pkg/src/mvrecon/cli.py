"""Command-line client for the reconstruction service.

Each subcommand marshals a config (JSON file plus flag overrides) into the
service's request schema and invokes the stage, either in process (default)
or against a running server via --server / MVRECON_SERVER. Responses are
printed as JSON.
"""

import json
import logging
import sys
from pathlib import Path

import click

from . import pipeline
from .config import PipelineConfig
from .errors import MvreconError
from .synthscene import SceneSpec


def _load_config_dict(config_path: str | None) -> dict:
    if config_path is None:
        return {}
    return json.loads(Path(config_path).read_text())


def _set_override(cfg: dict, dotted: str, value) -> None:
    if value is None:
        return
    keys = dotted.split(".")
    node = cfg
    for k in keys[:-1]:
        node = node.setdefault(k, {})
    node[keys[-1]] = value


def _build_config(config_path, **overrides) -> PipelineConfig:
    cfg = _load_config_dict(config_path)
    for dotted, value in overrides.items():
        _set_override(cfg, dotted.replace("__", "."), value)
    return PipelineConfig.model_validate(cfg)


def _post(server: str, endpoint: str, payload: dict) -> dict:
    import httpx

    resp = httpx.post(f"{server.rstrip('/')}/{endpoint}", json=payload,
                      timeout=3600.0)
    if resp.status_code >= 400:
        click.echo(resp.text, err=True)
        sys.exit(1)
    return resp.json()


def _run_stage(stage: str, config: PipelineConfig, server: str | None) -> dict:
    if server:
        return _post(server, stage, {"config": config.model_dump(mode="json")})
    runner = {
        "project": pipeline.run_project,
        "condition": pipeline.run_condition,
        "predict": pipeline.run_predict,
        "align": pipeline.run_align,
        "fuse": pipeline.run_fuse,
        "evaluate": pipeline.run_evaluate,
        "reconstruct": pipeline.run_reconstruct,
    }[stage]
    try:
        return runner(config)
    except MvreconError as exc:
        click.echo(f"{type(exc).__name__}: {exc}", err=True)
        sys.exit(1)


def _emit(result: dict) -> None:
    click.echo(json.dumps(result, indent=2, sort_keys=True, default=str))


def _common_options(fn):
    opts = [
        click.option("--config", "config_path", type=click.Path(exists=True),
                     default=None, help="Pipeline config JSON."),
        click.option("--server", envvar="MVRECON_SERVER", default=None,
                     help="Remote service URL; default runs in process."),
        click.option("--model-dir", "model_dir", envvar="MVRECON_MODEL_DIR",
                     default=None),
        click.option("--output-dir", "output_dir", envvar="MVRECON_OUTPUT_DIR",
                     default=None),
        click.option("--prediction-dir", "prediction_dir",
                     envvar="MVRECON_PREDICTION_DIR", default=None),
        click.option("--image-dir", "image_dir", envvar="MVRECON_IMAGE_DIR",
                     default=None),
        click.option("--views", default=None,
                     help="Comma-separated image ids to process."),
        click.option("--seed", type=int, default=None),
    ]
    for opt in reversed(opts):
        fn = opt(fn)
    return fn


def _collect(config_path, views, **overrides) -> PipelineConfig:
    if views is not None:
        overrides["views"] = [int(v) for v in views.split(",") if v]
    return _build_config(config_path, **{
        k.replace(".", "__"): v for k, v in overrides.items()
    })


@click.group()
@click.version_option(package_name="mvrecon")
@click.option("--log-level", default="warning",
              type=click.Choice(["debug", "info", "warning", "error"]),
              help="Stage logging verbosity (stderr; stdout stays JSON).")
def main(log_level):
    """Multi-view reconstruction from SfM priors and dense depth providers."""
    logging.basicConfig(
        level=getattr(logging, log_level.upper()),
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
        stream=sys.stderr,
    )


@main.command("project", help="Render per-view sparse depth from the SfM model.")
@click.option("--use-visibility/--no-use-visibility", "use_visibility", default=None)
@_common_options
def cmd_project(config_path, server, model_dir, output_dir, prediction_dir,
                image_dir, views, seed, use_visibility):
    config = _collect(config_path, views, model_dir=model_dir,
                      output_dir=output_dir, prediction_dir=prediction_dir,
                      image_dir=image_dir, seed=seed,
                      use_visibility=use_visibility)
    _emit(_run_stage("project", config, server))


@main.command("condition", help="Build densified depth + distance map bundles.")
@click.option("--k", "conditioning__k", type=int, default=None)
@click.option("--distance-map/--no-distance-map", "conditioning__distance_map",
              default=None)
@_common_options
def cmd_condition(config_path, server, model_dir, output_dir, prediction_dir,
                  image_dir, views, seed, **kwargs):
    config = _collect(config_path, views, model_dir=model_dir,
                      output_dir=output_dir, prediction_dir=prediction_dir,
                      image_dir=image_dir, seed=seed, **kwargs)
    _emit(_run_stage("condition", config, server))


@main.command("predict", help="Run the dense depth provider per view.")
@click.option("--provider-kind", "provider__kind", default=None,
              type=click.Choice(["from_files", "synthetic_oracle", "constant",
                                 "densified"]))
@click.option("--ensemble-size", "provider__ensemble_size", type=int, default=None)
@_common_options
def cmd_predict(config_path, server, model_dir, output_dir, prediction_dir,
                image_dir, views, seed, **kwargs):
    config = _collect(config_path, views, model_dir=model_dir,
                      output_dir=output_dir, prediction_dir=prediction_dir,
                      image_dir=image_dir, seed=seed, **kwargs)
    _emit(_run_stage("predict", config, server))


@main.command("align", help="Fit and apply per-view scale-shift alignment.")
@click.option("--alignment-method", "alignment__method", default=None,
              type=click.Choice(["ransac", "least_squares", "none"]))
@_common_options
def cmd_align(config_path, server, model_dir, output_dir, prediction_dir,
              image_dir, views, seed, **kwargs):
    config = _collect(config_path, views, model_dir=model_dir,
                      output_dir=output_dir, prediction_dir=prediction_dir,
                      image_dir=image_dir, seed=seed, **kwargs)
    _emit(_run_stage("align", config, server))


@main.command("fuse", help="Fuse aligned depths into a mesh or point cloud.")
@click.option("--fusion-mode", "fusion__mode", default=None,
              type=click.Choice(["tsdf", "point_cloud"]))
@_common_options
def cmd_fuse(config_path, server, model_dir, output_dir, prediction_dir,
             image_dir, views, seed, **kwargs):
    config = _collect(config_path, views, model_dir=model_dir,
                      output_dir=output_dir, prediction_dir=prediction_dir,
                      image_dir=image_dir, seed=seed, **kwargs)
    _emit(_run_stage("fuse", config, server))


@main.command("evaluate", help="Score fused geometry against ground truth.")
@click.option("--gt-mesh", "evaluation__gt_mesh", default=None)
@click.option("--gt-depth-dir", "evaluation__gt_depth_dir", default=None)
@_common_options
def cmd_evaluate(config_path, server, model_dir, output_dir, prediction_dir,
                 image_dir, views, seed, **kwargs):
    config = _collect(config_path, views, model_dir=model_dir,
                      output_dir=output_dir, prediction_dir=prediction_dir,
                      image_dir=image_dir, seed=seed, **kwargs)
    result = _run_stage("evaluate", config, server)
    _emit(result)
    if not result.get("gates_passed", True):
        sys.exit(3)


@main.command("reconstruct",
              help="Full pipeline: project, condition, predict, align, fuse, "
                   "evaluate.")
@click.option("--alignment-method", "alignment__method", default=None,
              type=click.Choice(["ransac", "least_squares", "none"]))
@click.option("--fusion-mode", "fusion__mode", default=None,
              type=click.Choice(["tsdf", "point_cloud"]))
@click.option("--provider-kind", "provider__kind", default=None,
              type=click.Choice(["from_files", "synthetic_oracle", "constant",
                                 "densified"]))
@click.option("--k", "conditioning__k", type=int, default=None,
              help="KNN densification neighbor count (0 disables).")
@_common_options
def cmd_reconstruct(config_path, server, model_dir, output_dir, prediction_dir,
                    image_dir, views, seed, **kwargs):
    config = _collect(config_path, views, model_dir=model_dir,
                      output_dir=output_dir, prediction_dir=prediction_dir,
                      image_dir=image_dir, seed=seed, **kwargs)
    result = _run_stage("reconstruct", config, server)
    _emit(result)
    if not result.get("gates_passed", True):
        sys.exit(3)


@main.command("synth", help="Generate a synthetic scene with ground truth.")
@click.option("--output-dir", required=True)
@click.option("--shape", default="plane",
              type=click.Choice(["plane", "sphere", "room"]))
@click.option("--plane-z", type=float, default=2.0)
@click.option("--radius", type=float, default=1.0)
@click.option("--room-extents", default="4,4,2.5",
              help="Comma-separated box extents.")
@click.option("--n-views", type=int, default=8)
@click.option("--trajectory", default="orbit", type=click.Choice(["orbit", "line"]))
@click.option("--image-size", default="64x64", help="WIDTHxHEIGHT pixels.")
@click.option("--sparse-points", type=int, default=200)
@click.option("--outlier-fraction", type=float, default=0.0)
@click.option("--noise-depth", type=float, default=0.0)
@click.option("--fov-deg", type=float, default=60.0)
@click.option("--cam-distance", type=float, default=None)
@click.option("--seed", type=int, default=0)
@click.option("--server", envvar="MVRECON_SERVER", default=None)
def cmd_synth(output_dir, shape, plane_z, radius, room_extents, n_views,
              trajectory, image_size, sparse_points, outlier_fraction,
              noise_depth, fov_deg, cam_distance, seed, server):
    w, h = (int(x) for x in image_size.lower().split("x"))
    if server:
        payload = {
            "output_dir": output_dir, "shape": shape, "plane_z": plane_z,
            "radius": radius,
            "room_extents": [float(x) for x in room_extents.split(",")],
            "n_views": n_views, "trajectory": trajectory,
            "image_width": w, "image_height": h,
            "sparse_points_per_view": sparse_points,
            "outlier_fraction": outlier_fraction, "noise_depth": noise_depth,
            "seed": seed, "fov_deg": fov_deg, "cam_distance": cam_distance,
        }
        _emit(_post(server, "synth", payload))
        return
    spec = SceneSpec(
        shape=shape, plane_z=plane_z, radius=radius,
        room_extents=tuple(float(x) for x in room_extents.split(",")),
        n_views=n_views, trajectory=trajectory, image_size=(w, h),
        sparse_points_per_view=sparse_points, outlier_fraction=outlier_fraction,
        noise_depth=noise_depth, seed=seed, fov_deg=fov_deg,
        cam_distance=cam_distance,
    )
    try:
        _emit(pipeline.run_synth(spec, Path(output_dir)))
    except MvreconError as exc:
        click.echo(f"{type(exc).__name__}: {exc}", err=True)
        sys.exit(1)


@main.command("serve", help="Run the HTTP service.")
@click.option("--host", default="127.0.0.1")
@click.option("--port", type=int, default=8000)
def cmd_serve(host, port):
    import uvicorn

    uvicorn.run("mvrecon.service.app:app", host=host, port=port)


if __name__ == "__main__":
    main()
