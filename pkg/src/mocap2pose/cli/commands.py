"""Subcommand implementations; each writes its files plus a run manifest."""

from __future__ import annotations

import json
import logging
import time
from pathlib import Path

import numpy as np

from .. import body_model as bm
from .. import mocap
from .. import synthetic as sy
from ..eval import (OksConfig, ap_ar, build_report, combination_sweep, emit_report, predictions_by_frame,
                    reference_from_annotations, triangulate_frames)
from ..fitting import export_motion, fit_sequence, load_motion, marker_error_report, optimized_joints
from ..multiview import CameraIntrinsics, calibration_roundtrip_check, load_calibration, save_calibration
from ..optim import GmmModel, gmm_fit_em, load_gmm
from ..synth import (SceneSpec, emit_annotations, generate_annotations, load_annotations, make_camera_rig,
                     make_predictions, write_skeleton_svg)
from .config import PipelineConfig
from .manifest import RunManifest

logger = logging.getLogger(__name__)


def output_dir(cfg: PipelineConfig) -> Path:
    out = Path(cfg.paths.output)
    out.mkdir(parents=True, exist_ok=True)
    return out


def new_manifest(command: str, cfg: PipelineConfig) -> RunManifest:
    return RunManifest(command, cfg.seed, cfg.to_dict(), cfg.content_hash())


def close_manifest(man: RunManifest, out: Path, outputs, status: str = "ok") -> RunManifest:
    man.add_outputs(out, sorted(Path(p) for p in outputs))
    man.finish(status)
    man.write(out / "manifest.json")
    logger.info("manifest %s (content hash %s)", out / "manifest.json", man.content_hash()[:12])
    return man


def load_model(cfg: PipelineConfig, man: RunManifest | None = None) -> bm.BodyModelData:
    if cfg.paths.model is None:
        return bm.build_test_body()
    (p,) = cfg.require("model")
    if man is not None:
        man.add_input("model", p)
    return bm.load_body_model(p)


def load_prior(cfg: PipelineConfig, model: bm.BodyModelData, man: RunManifest | None = None) -> GmmModel:
    """Pose prior from ``paths.prior``, or fitted to generated poses of ``model``."""
    if cfg.paths.prior is not None:
        (p,) = cfg.require("prior")
        if man is not None:
            man.add_input("prior", p)
        return load_gmm(p)
    pj = optimized_joints(model)
    corpus = sy.pose_corpus(model, seed=cfg.seed)
    return gmm_fit_em(corpus[:, pj - 1].reshape(len(corpus), -1), 8, seed=cfg.seed)


def scene_rig(cfg: PipelineConfig):
    s = cfg.scene
    intr = CameraIntrinsics(s.focal_px, s.focal_px, 960.0, 540.0, 1920, 1080)
    return make_camera_rig(s.n_cameras, s.radius, s.heights, s.target, intr, seed=cfg.seed)


# --------------------------------------------------------------------------- filter

def cmd_filter(cfg: PipelineConfig, units: str | None = None) -> RunManifest:
    """Filter a marker file; writes filtered.npz and filter_report.json."""
    out = output_dir(cfg)
    man = new_manifest("filter", cfg)
    (markers,) = cfg.require("markers")
    man.add_input("markers", markers)
    seq = mocap.load_markers(markers, units=units)
    layout = None
    if cfg.paths.layout is not None:
        (lp,) = cfg.require("layout")
        man.add_input("layout", lp)
        layout = bm.load_marker_layout(lp)
    t = time.perf_counter()
    filtered, report = mocap.run_filter_pipeline(seq, cfg.filter, layout)
    files = [out / "filtered.npz", out / "filter_report.json"]
    mocap.save_npz(filtered, files[0])
    files[1].write_text(json.dumps(report.to_dict(), indent=1))
    man.stage("filter", time.perf_counter() - t, input_count=report.input_count, kept_count=report.kept_count,
              kept_fraction=report.kept_fraction, dropped=report.dropped)
    return close_manifest(man, out, files)


# --------------------------------------------------------------------------- fit

def cmd_fit(cfg: PipelineConfig, units: str | None = None) -> RunManifest:
    """Fit the body model; writes motion.npz, stage_log.json, correspondence.json and marker error files."""
    out = output_dir(cfg)
    man = new_manifest("fit", cfg)
    markers, layout_path = cfg.require("markers", "layout")
    man.add_input("markers", markers)
    man.add_input("layout", layout_path)
    model = load_model(cfg, man)
    layout = bm.load_marker_layout(layout_path, model)
    seq = mocap.load_markers(markers, units=units)
    gmm = load_prior(cfg, model, man)
    t = time.perf_counter()
    sol = fit_sequence(seq, model, layout, cfg.fit.stages, cfg.fit.weights, gmm, config=cfg.fit.options)
    man.stage("fit", time.perf_counter() - t, frames=sol.n_frames, markers=len(sol.marker_names),
              stages=[r.to_dict() for r in sol.stage_log], flags=sol.flags)
    files = fit_outputs(sol, seq, model, out, cfg)
    rep = json.loads((out / "stage_log.json").read_text())
    man.stage("marker_errors", mean_mm=rep["mean_marker_error_mm"])
    return close_manifest(man, out, files)


def fit_outputs(sol, seq, model, out: Path, cfg: PipelineConfig) -> list[Path]:
    files = [export_motion(sol, out / "motion.npz", model.joint_names)]
    mrep = marker_error_report(sol, seq, sol.correspondence, model, cfg.fit.options.offset)
    mrep.to_csv(out / "marker_errors.csv")
    mrep.to_svg(out / "marker_errors.svg")
    (out / "stage_log.json").write_text(json.dumps(
        {"stages": [r.to_dict() for r in sol.stage_log], "flags": sol.flags,
         "mean_marker_error_mm": 1e3 * mrep.overall_mean}, indent=1))
    (out / "correspondence.json").write_text(json.dumps(sol.correspondence, indent=1, sort_keys=True))
    files += [out / "marker_errors.csv", out / "marker_errors.svg", out / "stage_log.json",
              out / "correspondence.json"]
    return files


# --------------------------------------------------------------------------- synth

def cmd_synth(cfg: PipelineConfig, with_predictions: bool = True) -> RunManifest:
    """Annotate a motion from every camera; writes annotations.json, predictions.json,
    calibration.json and skeleton SVGs."""
    out = output_dir(cfg)
    man = new_manifest("synth", cfg)
    (motion_path,) = cfg.require("motion")
    man.add_input("motion", motion_path)
    model = load_model(cfg, man)
    motion = load_motion(motion_path)
    if cfg.paths.calibration is not None:
        (cp,) = cfg.require("calibration")
        man.add_input("calibration", cp)
        rig = load_calibration(cp)
    else:
        rig = scene_rig(cfg)
    files = synth_outputs(cfg, model, motion, rig, out, with_predictions, man)
    return close_manifest(man, out, files)


def synth_outputs(cfg, model, motion, rig, out: Path, with_predictions: bool, man: RunManifest,
                  frames=None) -> list[Path]:
    t = time.perf_counter()
    scene = SceneSpec.from_motion(rig, model, motion, stride=cfg.scene.stride, seed=cfg.seed,
                                  surface_tolerance=cfg.scene.surface_tolerance)
    gt = generate_annotations(scene, frames)
    v = np.array([a.keypoints[:, 2] for a in gt.annotations])
    man.stage("synth", time.perf_counter() - t, images=len(gt.images), cameras=len(rig),
              frames=len(gt.frames()), visible=float(np.mean(v == 2)), occluded=float(np.mean(v == 1)),
              outside=float(np.mean(v == 0)))
    files = [emit_annotations(gt, out / "annotations.json")]
    save_calibration(rig, out / "calibration.json")
    files.append(out / "calibration.json")
    if with_predictions:
        pred = make_predictions(gt, cfg.predictions, seed=cfg.seed)
        files.append(emit_annotations(pred, out / "predictions.json"))
    svg_dir = out / "skeletons"
    svg_dir.mkdir(exist_ok=True)
    lookup = gt.lookup()
    for f in gt.frames()[:cfg.scene.svg_frames]:
        for cam in rig:
            a = lookup[(cam.id, f)]
            files.append(write_skeleton_svg(svg_dir / f"{cam.id}_{f:06d}.svg", a,
                                            (cam.intrinsics.width, cam.intrinsics.height)))
    return files


# --------------------------------------------------------------------------- triangulate

def calibration_sample_points(cfg: PipelineConfig, n: int = 5) -> np.ndarray:
    t = np.asarray(cfg.scene.target, dtype=float)
    axes = [np.linspace(c - 2.0, c + 2.0, n) for c in t]
    return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)


def cmd_triangulate(cfg: PipelineConfig) -> RunManifest:
    """Triangulate predicted keypoints; writes poses3d.npz and calibration_check.json."""
    out = output_dir(cfg)
    man = new_manifest("triangulate", cfg)
    pred_path, calib_path = cfg.require("predictions", "calibration")
    man.add_input("predictions", pred_path)
    man.add_input("calibration", calib_path)
    rig = load_calibration(calib_path)
    pred = load_annotations(pred_path)
    files = triangulate_outputs(cfg, rig, pred, out, man)
    return close_manifest(man, out, files)


def triangulate_outputs(cfg, rig, pred, out: Path, man: RunManifest) -> list[Path]:
    check = calibration_roundtrip_check(rig, calibration_sample_points(cfg))
    (out / "calibration_check.json").write_text(json.dumps(
        {"rmse_px": check.rmse_px, "per_camera_rmse_px": check.per_camera_rmse_px, "n_points": check.n_points,
         "warning": check.warning}, indent=1, sort_keys=True))
    t = time.perf_counter()
    frames, per_frame = predictions_by_frame(pred)
    pos, valid = triangulate_frames(per_frame, rig, cfg.triangulation)
    np.savez(out / "poses3d.npz", frames=np.asarray(frames, dtype=np.int64), positions=pos, valid=valid,
             keypoint_names=np.asarray(pred.keypoint_names), min_cameras=cfg.triangulation.min_cameras,
             reproj_threshold_px=cfg.triangulation.reproj_threshold_px)
    man.stage("triangulate", time.perf_counter() - t, frames=len(frames), valid_fraction=float(valid.mean()),
              calibration_rmse_px=check.rmse_px, calibration_warning=check.warning)
    return [out / "calibration_check.json", out / "poses3d.npz"]


# --------------------------------------------------------------------------- eval

def cmd_eval2d(cfg: PipelineConfig) -> RunManifest:
    """AP/AR of predictions against ground truth; writes metrics_2d.csv."""
    out = output_dir(cfg)
    man = new_manifest("eval2d", cfg)
    pred_path, gt_path = cfg.require("predictions", "annotations")
    man.add_input("predictions", pred_path)
    man.add_input("annotations", gt_path)
    res = ap_ar(load_annotations(pred_path), load_annotations(gt_path), OksConfig())
    man.stage("eval2d", **res._asdict())
    files = emit_report(build_report(res), out)
    return close_manifest(man, out, files)


def cmd_eval3d(cfg: PipelineConfig) -> RunManifest:
    """Camera-combination sweep against a reference triangulated from ground truth in all views."""
    out = output_dir(cfg)
    man = new_manifest("eval3d", cfg)
    pred_path, gt_path, calib_path = cfg.require("predictions", "annotations", "calibration")
    for name, p in (("predictions", pred_path), ("annotations", gt_path), ("calibration", calib_path)):
        man.add_input(name, p)
    rig = load_calibration(calib_path)
    pred, gt = load_annotations(pred_path), load_annotations(gt_path)
    files = eval3d_outputs(cfg, rig, pred, gt, out, man)
    return close_manifest(man, out, files)


def eval3d_outputs(cfg, rig, pred, gt, out: Path, man: RunManifest, metrics_2d=None):
    t = time.perf_counter()
    frames, ref, ref_valid = reference_from_annotations(gt, rig, cfg.triangulation)
    pframes, per_frame = predictions_by_frame(pred)
    if pframes != frames:
        raise ValueError("predictions and ground truth cover different frames")
    n_min = cfg.eval.n_min or cfg.triangulation.min_cameras
    n_max = cfg.eval.n_max or len(rig)
    sweep = combination_sweep(per_frame, rig, ref, range(n_min, n_max + 1), cfg.triangulation, ref_valid)
    if metrics_2d is None:
        metrics_2d = ap_ar(pred, gt)
    report = build_report(metrics_2d, sweep, cfg.eval.reproj_thresholds, cfg.eval.mpjpe_thresholds)
    files = emit_report(report, out)
    man.stage("eval3d", time.perf_counter() - t, frames=len(frames), combinations=sweep.counts(),
              median_mpjpe_mm={n: s.median for n, s in report.mpjpe_stats.items()}, **metrics_2d._asdict())
    return files


# --------------------------------------------------------------------------- gradcheck

def cmd_gradcheck(cfg: PipelineConfig, states: int = 20):
    """Finite-difference check of the fitting loss and pose prior gradients."""
    from ..acceptance import Fixture, check_gradients

    out = output_dir(cfg)
    man = new_manifest("gradcheck", cfg)
    res = check_gradients(Fixture.build(cfg.seed), n_states=states)
    man.stage("gradcheck", res.seconds, **res.to_dict())
    print(res.line())
    return close_manifest(man, out, [], "ok" if res.passed else "failed"), res.passed
