"""Multi-view 2D keypoint annotations with visibility flags from a posed body."""

from .annotations import (BBOX_PADDING, COCO_SKELETON, AnnotationError, AnnotationSet, JointAnnotation2D,
                          PredictionNoise, SceneSpec, annotate_frame, emit_annotations, generate_annotations,
                          load_annotations, make_predictions, padded_bbox, visibility_flags)
from .render import SkeletonStyle, render_skeleton_svg, write_skeleton_svg
from .rig import RigSpec, default_intrinsics, make_camera_rig, rig_from_spec, volume_coverage
from .visibility import (DEFAULT_SURFACE_TOLERANCE, occlusion_flags, project_joints, ray_mesh_occluded,
                         ray_triangle_distances)

__all__ = [
    "BBOX_PADDING", "COCO_SKELETON", "AnnotationError", "AnnotationSet", "JointAnnotation2D", "PredictionNoise",
    "SceneSpec", "annotate_frame", "emit_annotations", "generate_annotations", "load_annotations",
    "make_predictions", "padded_bbox", "visibility_flags",
    "SkeletonStyle", "render_skeleton_svg", "write_skeleton_svg",
    "RigSpec", "default_intrinsics", "make_camera_rig", "rig_from_spec", "volume_coverage",
    "DEFAULT_SURFACE_TOLERANCE", "occlusion_flags", "project_joints", "ray_mesh_occluded", "ray_triangle_distances",
]
