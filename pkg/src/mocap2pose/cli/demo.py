"""The ``demo`` command: every self-check plus the full pipeline on generated data."""

from __future__ import annotations

import json
import logging
import time
from pathlib import Path

import numpy as np

from .. import acceptance as acc
from ..eval import ap_ar, build_report, emit_report, predictions_by_frame, triangulate_frames
from ..fitting import export_motion
from ..multiview import save_calibration
from ..synth import emit_annotations, write_skeleton_svg
from .config import PipelineConfig
from .manifest import RunManifest

logger = logging.getLogger(__name__)


def _step(results: list, man: RunManifest, out):
    res, extra = (out if isinstance(out, tuple) else (out, None))
    results.append(res)
    man.stage(f"criterion_{res.criterion}", res.seconds, **res.to_dict())
    print(res.line(), flush=True)
    return extra


def cmd_demo(cfg: PipelineConfig, jump_filter: bool = True, stride: int = 20) -> tuple[RunManifest, list]:
    """Run checks 1 to 8 and the pipeline; returns the manifest and the check results.

    Outputs already written stay on disk when a later step raises.
    """
    t_start = time.perf_counter()
    out = Path(cfg.paths.output)
    out.mkdir(parents=True, exist_ok=True)
    man = RunManifest("demo", cfg.seed, cfg.to_dict(), cfg.content_hash())
    man.stage("options", jump_filter=jump_filter, stride=stride)
    results: list[acc.CheckResult] = []
    files: list[Path] = []
    status = "failed"
    try:
        t = time.perf_counter()
        fx = acc.Fixture.build(cfg.seed, jump_filter=jump_filter)
        man.stage("fixture", time.perf_counter() - t, markers=len(fx.layout), prior_components=fx.gmm.n_components)
        _step(results, man, acc.check_filters(fx))
        _step(results, man, acc.check_gradients(fx))
        _step(results, man, acc.check_triangulation(fx))
        _step(results, man, acc.check_visibility(fx))
        _step(results, man, acc.check_calibration(fx))

        fit = _step(results, man, acc.check_fitting(fx))
        sol = fit["solution"]
        files.append(export_motion(sol, out / "motion.npz", fx.model.joint_names))
        fit["marker_report"].to_csv(out / "marker_errors.csv")
        fit["marker_report"].to_svg(out / "marker_errors.svg")
        (out / "filter_report.json").write_text(json.dumps(fit["filter_report"].to_dict(), indent=1))
        files += [out / "marker_errors.csv", out / "marker_errors.svg", out / "filter_report.json"]

        rig, gt = acc.scene_annotations(fx, sol, stride=stride)
        save_calibration(rig, out / "calibration.json")
        files += [out / "calibration.json", emit_annotations(gt, out / "annotations.json")]
        svg_dir = out / "skeletons"
        svg_dir.mkdir(exist_ok=True)
        lookup = gt.lookup()
        f0 = gt.frames()[0]
        for cam in rig:
            files.append(write_skeleton_svg(svg_dir / f"{cam.id}_{f0:06d}.svg", lookup[(cam.id, f0)],
                                            (cam.intrinsics.width, cam.intrinsics.height)))

        sweep_out = _step(results, man, acc.check_sweep(fx, rig, gt))
        pred, sweep = sweep_out["sweeps"]["good"]
        files.append(emit_annotations(pred, out / "predictions.json"))
        _, per_frame = predictions_by_frame(pred)
        pos, valid = triangulate_frames(per_frame, rig, sweep.config)
        np.savez(out / "poses3d.npz", positions=pos, valid=valid)
        files.append(out / "poses3d.npz")

        _step(results, man, acc.check_metrics(fx, gt))

        metrics = ap_ar(pred, gt)
        report = build_report(metrics, sweep, cfg.eval.reproj_thresholds, cfg.eval.mpjpe_thresholds)
        files += emit_report(report, out / "eval")
        man.stage("eval", **metrics._asdict(), combinations=sweep.counts(),
                  median_mpjpe_mm={n: s.median for n, s in report.mpjpe_stats.items()})
        status = "ok" if all(r.passed for r in results) else "failed"
    finally:
        seconds = time.perf_counter() - t_start
        man.stage("total", seconds, checks_passed=sum(r.passed for r in results), checks_run=len(results))
        (out / "checks.json").write_text(json.dumps([r.to_dict() for r in results], indent=1))
        files.append(out / "checks.json")
        man.add_outputs(out, sorted(p for p in files if p.exists()))
        man.finish(status)
        man.write(out / "manifest.json")
        logger.info("demo finished in %.1f s, status %s", seconds, status)
    return man, results
