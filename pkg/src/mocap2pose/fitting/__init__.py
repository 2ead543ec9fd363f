"""Body-model fitting to filtered marker sequences."""

from .correspondence import Correspondence, estimate_correspondence, posed_marker_points
from .io import MOTION_FORMAT, export_motion, load_motion
from .loss import PARAMETER_GROUPS, FitLoss, FitParams, FitWeights, fit_loss, optimized_joints, prior_dimension
from .pipeline import FitConfig, MotionSolution, StageRecord, StageSpec, default_schedule, fit_sequence
from .report import MarkerErrorReport, marker_error_report
from .rough import RoughFit, RoughFitError, kabsch, rough_global_fit

__all__ = [
    "Correspondence", "estimate_correspondence", "posed_marker_points",
    "MOTION_FORMAT", "export_motion", "load_motion",
    "PARAMETER_GROUPS", "FitLoss", "FitParams", "FitWeights", "fit_loss", "optimized_joints", "prior_dimension",
    "FitConfig", "MotionSolution", "StageRecord", "StageSpec", "default_schedule", "fit_sequence",
    "MarkerErrorReport", "marker_error_report",
    "RoughFit", "RoughFitError", "kabsch", "rough_global_fit",
]
