"""Stage runners operating on directories.

Each stage reads its inputs from disk and writes its outputs under the
configured output directory, so per-stage runs compose into exactly the
same bytes the one-shot reconstruct produces (reconstruct simply chains the
stages). Layout inside output_dir:

    sparse_depth/<image_name>.depth.f32 (+ .meta.json, .npy)
    conditioning/<image_name>.densified.f32, .distance.f32, .range.json
    predictions/<image_name>.depth.f32 (+ .meta.json)
    aligned/<image_name>.depth.f32 (+ .meta.json), alignment_log.json
    fused/mesh.ply, fused/mesh.obj or fused/points.ply
    metrics.json
"""

import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import alignment as align_mod
from . import conditioning as cond_mod
from .config import PipelineConfig
from .errors import MissingFile, MvreconError
from .evaluation import chamfer, depth_rmse, fscore, sample_mesh
from .fileio import (
    read_depth_raster,
    read_mesh_ply,
    read_point_cloud_ply,
    write_depth_raster,
    write_mesh_obj,
    write_mesh_ply,
    write_point_cloud_ply,
)
from .fusion import auto_volume, extract_mesh, fuse_point_cloud, integrate
from .geometry import SparseDepthMap, render_sparse_depth
from .providers import (
    METRIC,
    NORMALIZED,
    DenseDepthMap,
    ProviderSpec,
    ensemble_median,
    make_provider,
)
from .sfm_io import SfmModel, read_model
from .synthscene import SceneSpec, export_scene, generate

logger = logging.getLogger(__name__)


def _with_context(stage: str, view: str):
    def wrap(exc: Exception) -> Exception:
        exc.args = (f"[{stage}] view {view}: {exc}",)
        return exc

    return wrap


def load_config(path: Path) -> PipelineConfig:
    return PipelineConfig.model_validate_json(Path(path).read_text())


def _selected_images(model: SfmModel, cfg: PipelineConfig) -> list[int]:
    ids = sorted(model.images)
    if cfg.views is not None:
        wanted = set(cfg.views)
        missing = wanted - set(ids)
        if missing:
            raise MissingFile(f"views not in model: {sorted(missing)}")
        ids = [i for i in ids if i in wanted]
    return ids


def _map_views(cfg: PipelineConfig, ids: list[int], fn) -> list:
    """Run fn(view_id) over views with a bounded pool; results in id order."""
    if cfg.workers <= 1 or len(ids) <= 1:
        return [fn(i) for i in ids]
    with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
        return list(pool.map(fn, ids))


# --- stage: project ---

def run_project(cfg: PipelineConfig) -> dict:
    """Render per-view sparse depth maps from the SfM model."""
    t0 = time.perf_counter()
    model = read_model(Path(cfg.model_dir), cfg.model_format)
    ids = _selected_images(model, cfg)
    out_dir = Path(cfg.output_dir) / "sparse_depth"

    def work(iid: int) -> str:
        name = model.images[iid].name
        try:
            sparse = render_sparse_depth(model, iid, cfg.use_visibility, cfg.splat)
        except MvreconError as exc:
            raise _with_context("project", f"{iid} ({name})")(exc)
        write_depth_raster(
            out_dir / f"{name}.depth.f32", sparse.depth, METRIC,
            {"encoding": "zero-empty", "valued_pixels": sparse.valued_count()},
        )
        np.save(out_dir / f"{name}.npy", sparse.depth.astype(np.float32))
        return name

    names = _map_views(cfg, ids, work)
    logger.info("project: %d views in %.2fs", len(names), time.perf_counter() - t0)
    return {"stage": "project", "views": names,
            "output_dir": str(out_dir), "elapsed_s": time.perf_counter() - t0}


def _load_sparse(out_dir: Path, name: str) -> SparseDepthMap:
    depth, meta = read_depth_raster(out_dir / "sparse_depth" / f"{name}.depth.f32")
    s = SparseDepthMap.empty(int(meta["width"]), int(meta["height"]))
    valued = depth > 0
    s.depth[valued] = depth[valued]
    s.source_point[valued] = 0  # ids are not persisted in the raster
    return s


# --- stage: condition ---

def run_condition(cfg: PipelineConfig) -> dict:
    """Build conditioning bundles from the rendered sparse depth."""
    t0 = time.perf_counter()
    model = read_model(Path(cfg.model_dir), cfg.model_format)
    ids = _selected_images(model, cfg)
    base = Path(cfg.output_dir)
    cond_dir = base / "conditioning"
    c = cfg.conditioning

    def work(iid: int) -> str:
        name = model.images[iid].name
        try:
            sparse = _load_sparse(base, name)
            bundle = cond_mod.build_bundle(
                sparse, k=c.k, trim_fraction=c.trim_fraction,
                expansion=(c.expansion_low, c.expansion_high),
                with_distance_map=c.distance_map, apply_trim=c.apply_trim,
                distance_on_pretrim=c.distance_on_pretrim,
            )
        except MvreconError as exc:
            raise _with_context("condition", f"{iid} ({name})")(exc)
        write_depth_raster(
            cond_dir / f"{name}.densified.f32", bundle.densified_depth, NORMALIZED
        )
        if bundle.distance_map is not None:
            write_depth_raster(
                cond_dir / f"{name}.distance.f32", bundle.distance_map, "pixels"
            )
        r = bundle.range
        (cond_dir / f"{name}.range.json").write_text(
            json.dumps(
                {
                    "d_min_adj": r.d_min_adj, "d_max_adj": r.d_max_adj,
                    "raw_min": r.raw_min, "raw_max": r.raw_max,
                    "k_used": bundle.k_used,
                },
                indent=2, sort_keys=True,
            )
            + "\n"
        )
        return name

    names = _map_views(cfg, ids, work)
    logger.info("condition: %d views in %.2fs", len(names), time.perf_counter() - t0)
    return {"stage": "condition", "views": names,
            "output_dir": str(cond_dir), "elapsed_s": time.perf_counter() - t0}


def _load_bundle(base: Path, name: str) -> cond_mod.ConditioningBundle:
    cond_dir = base / "conditioning"
    densified, _ = read_depth_raster(cond_dir / f"{name}.densified.f32")
    range_path = cond_dir / f"{name}.range.json"
    if not range_path.is_file():
        raise MissingFile(f"conditioning range not found: {range_path}")
    r = json.loads(range_path.read_text())
    dist = None
    dist_path = cond_dir / f"{name}.distance.f32"
    if dist_path.is_file():
        dist, _ = read_depth_raster(dist_path)
    return cond_mod.ConditioningBundle(
        densified, dist,
        cond_mod.NormalizationRange(
            r["d_min_adj"], r["d_max_adj"], r["raw_min"], r["raw_max"]
        ),
        int(r["k_used"]),
    )


# --- stage: predict ---

def _provider_spec(cfg: PipelineConfig) -> ProviderSpec:
    p = cfg.provider
    directory = p.directory
    if p.kind == "from_files" and directory is None:
        directory = cfg.prediction_dir
    # the top-level seed offsets every component seed, so one flag reseeds
    # the whole run
    return ProviderSpec(
        kind=p.kind, directory=directory, sigma_mult=p.sigma_mult,
        scale=p.scale, shift=p.shift, seed=p.seed + cfg.seed, constant=p.constant,
    )


def _load_gt_depths(directory: Path, model: SfmModel, ids: list[int]) -> dict:
    gt = {}
    for iid in ids:
        name = model.images[iid].name
        depth, _ = read_depth_raster(Path(directory) / f"{name}.depth.f32")
        gt[iid] = DenseDepthMap.from_array(depth)
    return gt


def run_predict(cfg: PipelineConfig) -> dict:
    """Run the configured depth provider (with ensembling) per view."""
    t0 = time.perf_counter()
    model = read_model(Path(cfg.model_dir), cfg.model_format)
    ids = _selected_images(model, cfg)
    base = Path(cfg.output_dir)
    pred_dir = base / "predictions"
    spec = _provider_spec(cfg)

    names = {iid: model.images[iid].name for iid in ids}
    gt_depths = None
    if spec.kind == "synthetic_oracle":
        if spec.directory is None:
            raise MissingFile("synthetic_oracle provider needs a ground-truth "
                              "depth directory")
        gt_depths = _load_gt_depths(Path(spec.directory), model, ids)
    provider = make_provider(spec, image_names=names, gt_depths=gt_depths)
    needs_bundle = spec.kind in ("constant", "densified")

    def work(iid: int) -> str:
        name = names[iid]
        try:
            bundle = _load_bundle(base, name) if needs_bundle else None
            maps = [
                provider.predict(iid, bundle=bundle, sample=s)
                for s in range(cfg.provider.ensemble_size)
            ]
            merged = ensemble_median(maps)
        except MvreconError as exc:
            raise _with_context("predict", f"{iid} ({name})")(exc)
        depth = np.where(merged.validity, merged.depth, np.nan)
        write_depth_raster(
            pred_dir / f"{name}.depth.f32", depth, merged.scale_domain
        )
        return name

    done = _map_views(cfg, ids, work)
    logger.info("predict: %d views in %.2fs", len(done), time.perf_counter() - t0)
    return {"stage": "predict", "views": done,
            "output_dir": str(pred_dir), "elapsed_s": time.perf_counter() - t0}


# --- stage: align ---

def run_align(cfg: PipelineConfig) -> dict:
    """De-normalize predictions if needed and align them to sparse depth."""
    t0 = time.perf_counter()
    model = read_model(Path(cfg.model_dir), cfg.model_format)
    ids = _selected_images(model, cfg)
    base = Path(cfg.output_dir)
    aligned_dir = base / "aligned"
    core_cfg = cfg.alignment.to_core()
    core_cfg.seed += cfg.seed

    def work(iid: int):
        name = model.images[iid].name
        view_t0 = time.perf_counter()
        try:
            depth, meta = read_depth_raster(base / "predictions" / f"{name}.depth.f32")
            pred = DenseDepthMap.from_array(
                depth, scale_domain=meta.get("scale_domain", METRIC)
            )
            range_filter = None
            range_path = base / "conditioning" / f"{name}.range.json"
            if range_path.is_file():
                r = json.loads(range_path.read_text())
                range_filter = cond_mod.NormalizationRange(
                    r["d_min_adj"], r["d_max_adj"], r["raw_min"], r["raw_max"]
                )
            if pred.scale_domain == NORMALIZED:
                if range_filter is None:
                    raise MissingFile(
                        f"normalized prediction for {name} needs {range_path}"
                    )
                metric = cond_mod.denormalize(pred.depth, range_filter)
                validity = pred.validity & (metric > 0)
                pred = DenseDepthMap(
                    pred.width, pred.height,
                    np.where(validity, metric, 0.0), validity, METRIC,
                )
            sparse = _load_sparse(base, name)
            aligned, fit = align_mod.align_view(pred, sparse, core_cfg, range_filter)
        except MvreconError as exc:
            raise _with_context("align", f"{iid} ({name})")(exc)
        depth_out = np.where(aligned.validity, aligned.depth, np.nan)
        write_depth_raster(aligned_dir / f"{name}.depth.f32", depth_out, METRIC)
        pairs = len(align_mod.gather_pairs(pred, sparse, range_filter))
        return {
            "image": name, "method": cfg.alignment.method,
            "scale": fit.scale, "shift": fit.shift,
            "inliers": fit.inlier_count, "pairs": pairs,
            "elapsed_s": time.perf_counter() - view_t0,
        }

    entries = _map_views(cfg, ids, work)
    elapsed = time.perf_counter() - t0
    log = {"method": cfg.alignment.method, "views": entries, "elapsed_s": elapsed}
    aligned_dir.mkdir(parents=True, exist_ok=True)
    (aligned_dir / "alignment_log.json").write_text(
        json.dumps(log, indent=2, sort_keys=True) + "\n"
    )
    logger.info("align: %d views in %.2fs", len(entries), elapsed)
    return {"stage": "align", "alignment": entries,
            "output_dir": str(aligned_dir), "elapsed_s": elapsed}


def _load_aligned_depths(base: Path, model: SfmModel, ids: list[int]) -> dict:
    out = {}
    for iid in ids:
        name = model.images[iid].name
        depth, _ = read_depth_raster(base / "aligned" / f"{name}.depth.f32")
        out[iid] = DenseDepthMap.from_array(depth)
    return out


# --- stage: fuse ---

def run_fuse(cfg: PipelineConfig) -> dict:
    """Fuse aligned depth maps into a mesh (TSDF) or a filtered point cloud."""
    t0 = time.perf_counter()
    model = read_model(Path(cfg.model_dir), cfg.model_format)
    ids = _selected_images(model, cfg)
    base = Path(cfg.output_dir)
    fused_dir = base / "fused"
    depths = _load_aligned_depths(base, model, ids)
    f = cfg.fusion

    if f.mode == "tsdf":
        volume = auto_volume(
            model, voxel_budget=f.voxel_budget,
            truncation_factor=f.truncation_factor,
            bbox_trim=f.bbox_trim, bbox_pad=f.bbox_pad,
        )
        for iid in ids:
            img = model.images[iid]
            cam = model.cameras[img.camera_id]
            integrate(volume, depths[iid], cam, img, max_weight=f.max_weight)
        mesh = extract_mesh(volume)
        write_mesh_ply(fused_dir / "mesh.ply", mesh.vertices, mesh.triangles)
        write_mesh_obj(fused_dir / "mesh.obj", mesh.vertices, mesh.triangles)
        result = {
            "mode": "tsdf", "mesh": str(fused_dir / "mesh.ply"),
            "vertices": len(mesh.vertices), "triangles": len(mesh.triangles),
            "voxel_size": volume.voxel_size, "dims": list(volume.dims),
        }
    else:
        cloud = fuse_point_cloud(
            depths, model, n_views=f.consistency_views,
            pixel_tol=f.consistency_pixel_tol, depth_tol=f.consistency_depth_tol,
        )
        write_point_cloud_ply(fused_dir / "points.ply", cloud.points, cloud.support)
        result = {
            "mode": "point_cloud", "points": str(fused_dir / "points.ply"),
            "count": len(cloud.points),
        }
    elapsed = time.perf_counter() - t0
    result.update({"stage": "fuse", "elapsed_s": elapsed})
    logger.info("fuse(%s): done in %.2fs", f.mode, elapsed)
    return result


# --- stage: evaluate ---

def _metrics_table(metrics: dict) -> str:
    """Aligned-column text rendering of the scalar metrics."""
    rows = [(k, v) for k, v in sorted(metrics.items())
            if isinstance(v, (int, float)) and not isinstance(v, bool)]
    rows.append(("gates_passed", metrics.get("gates_passed", True)))
    width = max(len(k) for k, _ in rows)
    lines = []
    for k, v in rows:
        if isinstance(v, float):
            lines.append(f"{k:<{width}}  {v:.6f}")
        else:
            lines.append(f"{k:<{width}}  {v}")
    return "\n".join(lines)


def run_evaluate(cfg: PipelineConfig) -> dict:
    """Score the fused geometry (and depth maps) against ground truth."""
    t0 = time.perf_counter()
    base = Path(cfg.output_dir)
    e = cfg.evaluation
    metrics: dict = {}

    eval_seed = e.seed + cfg.seed
    if e.gt_mesh is not None:
        gt_v, gt_t = read_mesh_ply(Path(e.gt_mesh))
        gt_pts = sample_mesh(gt_v, gt_t, e.sample_count, seed=eval_seed + 1)
        mesh_path = base / "fused" / "mesh.ply"
        cloud_path = base / "fused" / "points.ply"
        if mesh_path.is_file():
            pv, pt = read_mesh_ply(mesh_path)
            pred_pts = sample_mesh(pv, pt, e.sample_count, seed=eval_seed)
        elif cloud_path.is_file():
            pred_pts, _ = read_point_cloud_ply(cloud_path)
            if len(pred_pts) > e.sample_count:
                sel = np.random.default_rng(eval_seed).choice(
                    len(pred_pts), size=e.sample_count, replace=False
                )
                pred_pts = pred_pts[np.sort(sel)]
        else:
            raise MissingFile(f"no fused geometry under {base / 'fused'}")
        ch, acc, comp = chamfer(pred_pts, gt_pts)
        fs, prec, rec = fscore(pred_pts, gt_pts, tau=e.tau)
        metrics.update(
            chamfer=ch, accuracy=acc, completeness=comp,
            fscore=fs, precision=prec, recall=rec, threshold=e.tau,
            pred_count=int(len(pred_pts)), gt_count=int(len(gt_pts)),
        )

    if e.gt_depth_dir is not None:
        model = read_model(Path(cfg.model_dir), cfg.model_format)
        ids = _selected_images(model, cfg)
        per_view = {}
        sq_sum = 0.0
        n_sum = 0
        for iid in ids:
            name = model.images[iid].name
            pred, _ = read_depth_raster(base / "aligned" / f"{name}.depth.f32")
            gt, _ = read_depth_raster(Path(e.gt_depth_dir) / f"{name}.depth.f32")
            rmse, n = depth_rmse(
                pred, np.isfinite(pred) & (pred > 0),
                gt, np.isfinite(gt) & (gt > 0),
            )
            per_view[name] = rmse
            sq_sum += rmse * rmse * n
            n_sum += n
        metrics["depth_rmse"] = float(np.sqrt(sq_sum / n_sum))
        metrics["rmse_pixel_count"] = n_sum
        metrics["per_view_rmse"] = per_view

    gates = {}
    passed = True
    if e.max_chamfer is not None and "chamfer" in metrics:
        ok = metrics["chamfer"] <= e.max_chamfer
        gates["max_chamfer"] = {"bound": e.max_chamfer, "value": metrics["chamfer"],
                                "passed": ok}
        passed &= ok
    if e.min_fscore is not None and "fscore" in metrics:
        ok = metrics["fscore"] >= e.min_fscore
        gates["min_fscore"] = {"bound": e.min_fscore, "value": metrics["fscore"],
                               "passed": ok}
        passed &= ok
    if e.max_depth_rmse is not None and "depth_rmse" in metrics:
        ok = metrics["depth_rmse"] <= e.max_depth_rmse
        gates["max_depth_rmse"] = {"bound": e.max_depth_rmse,
                                   "value": metrics["depth_rmse"], "passed": ok}
        passed &= ok
    metrics["gates"] = gates
    metrics["gates_passed"] = bool(passed)

    (base / "metrics.json").write_text(
        json.dumps(metrics, indent=2, sort_keys=True) + "\n"
    )
    (base / "metrics.txt").write_text(_metrics_table(metrics) + "\n")
    logger.info("evaluate: done in %.2fs", time.perf_counter() - t0)
    return {"stage": "evaluate", "metrics": metrics,
            "metrics_path": str(base / "metrics.json"),
            "gates_passed": bool(passed),
            "elapsed_s": time.perf_counter() - t0}


# --- one-shot pipeline ---

def run_reconstruct(cfg: PipelineConfig) -> dict:
    """Full pipeline: project, condition, predict, align, fuse, evaluate.

    Stages are chained through the output directory, so per-stage runs and
    the one-shot run produce identical bytes.
    """
    t0 = time.perf_counter()
    stages = [run_project(cfg), run_condition(cfg), run_predict(cfg),
              run_align(cfg), run_fuse(cfg)]
    evaluate = (cfg.evaluation.gt_mesh is not None
                or cfg.evaluation.gt_depth_dir is not None)
    if evaluate:
        stages.append(run_evaluate(cfg))
    out = {
        "stage": "reconstruct",
        "stages": stages,
        "elapsed_s": time.perf_counter() - t0,
        "gates_passed": stages[-1].get("gates_passed", True) if evaluate else True,
    }
    for s in stages:
        if s["stage"] == "fuse":
            out["fused"] = {k: v for k, v in s.items()
                            if k not in ("stage", "elapsed_s")}
        if s["stage"] == "evaluate":
            out["metrics"] = s["metrics"]
        if s["stage"] == "align":
            out["alignment"] = s["alignment"]
    return out


def run_synth(spec: SceneSpec, out_dir: Path) -> dict:
    """Generate a synthetic scene and export it in pipeline formats."""
    scene = generate(spec)
    manifest = export_scene(scene, Path(out_dir))
    return {
        "stage": "synth",
        "output_dir": str(out_dir),
        "views": len(scene.model.images),
        "points": len(scene.model.points),
        "outliers": len(scene.outlier_point_ids),
        "depth_bounds": list(scene.depth_bounds),
        "manifest": manifest,
    }
