"""2D keypoint metrics and the multi-view camera-combination analysis."""

from .metrics import COCO_SIGMAS, ApAr, OksConfig, UndefinedMetricError, ap_ar, mpjpe, oks
from .report import (DEFAULT_MPJPE_THRESHOLDS, DEFAULT_REPROJ_THRESHOLDS, BoxStats, EvalReport, build_report,
                     emit_report, load_report)
from .sweep import (CombinationResult, CombinationSweep, ThresholdCurves, combination_sweep,
                    combinations_below_threshold, predictions_by_frame, reference_from_annotations,
                    triangulate_frames, valid_joint_fraction, valid_joint_fraction_rerun)

__all__ = [
    "COCO_SIGMAS", "ApAr", "OksConfig", "UndefinedMetricError", "ap_ar", "mpjpe", "oks",
    "DEFAULT_MPJPE_THRESHOLDS", "DEFAULT_REPROJ_THRESHOLDS", "BoxStats", "EvalReport", "build_report",
    "emit_report", "load_report",
    "CombinationResult", "CombinationSweep", "ThresholdCurves", "combination_sweep",
    "combinations_below_threshold", "predictions_by_frame", "reference_from_annotations", "triangulate_frames",
    "valid_joint_fraction", "valid_joint_fraction_rerun",
]
