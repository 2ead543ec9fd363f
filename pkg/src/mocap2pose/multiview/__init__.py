"""Camera geometry and robust multi-view triangulation."""

from .cameras import (CALIBRATION_FORMAT, Camera, CameraExtrinsics, CameraIntrinsics, CameraRig, CalibrationError,
                      distort, load_calibration, load_checkerboard_toml, project, rig_subset, save_calibration,
                      undistort)
from .triangulation import (CalibrationCheck, DegenerateGeometryError, TriangulatedJoint, TriangulationConfig,
                            calibration_roundtrip_check, dlt_triangulate, filter_observations,
                            normalize_observations, robust_triangulate_joint, subset_search,
                            triangulate_pose)

__all__ = [
    "CALIBRATION_FORMAT", "Camera", "CameraExtrinsics", "CameraIntrinsics", "CameraRig", "CalibrationError",
    "distort", "load_calibration", "load_checkerboard_toml", "project", "rig_subset", "save_calibration",
    "undistort",
    "CalibrationCheck", "DegenerateGeometryError", "TriangulatedJoint", "TriangulationConfig",
    "calibration_roundtrip_check", "dlt_triangulate", "filter_observations", "robust_triangulate_joint",
    "subset_search", "triangulate_pose", "normalize_observations",
]
