"""COCO-style multi-view keypoint annotations generated from a posed body."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .. import body_model as bm
from ..multiview.cameras import CameraRig
from .visibility import DEFAULT_SURFACE_TOLERANCE, occlusion_flags, project_joints

# 1-based edges of the 17-keypoint COCO skeleton
COCO_SKELETON = (
    (16, 14), (14, 12), (17, 15), (15, 13), (12, 13), (6, 12), (7, 13), (6, 7), (6, 8),
    (7, 9), (8, 10), (9, 11), (2, 3), (1, 2), (1, 3), (2, 4), (3, 5), (4, 6), (5, 7),
)
BBOX_PADDING = 0.10  # fraction of the tight box extent added on every side


class AnnotationError(ValueError):
    pass


@dataclass
class JointAnnotation2D:
    keypoints: np.ndarray  # (K, 3): x, y, v (ground truth) or x, y, confidence (predictions)
    bbox: np.ndarray  # (4,) x, y, w, h
    camera_id: str
    frame: int
    image_id: int = 0
    score: float | None = None  # set on predictions

    @property
    def area(self) -> float:
        return float(self.bbox[2] * self.bbox[3])

    @property
    def n_labelled(self) -> int:
        return int(np.count_nonzero(self.keypoints[:, 2] > 0))


@dataclass
class AnnotationSet:
    images: list[dict] = field(default_factory=list)  # id, file_name, width, height, camera_id, frame
    annotations: list[JointAnnotation2D] = field(default_factory=list)
    keypoint_names: tuple[str, ...] = bm.COCO_KEYPOINTS
    skeleton: tuple[tuple[int, int], ...] = COCO_SKELETON

    def validate(self) -> None:
        ids = [im["id"] for im in self.images]
        if len(set(ids)) != len(ids):
            raise AnnotationError("duplicate image ids")
        known = set(ids)
        seen = set()
        for a in self.annotations:
            if a.image_id not in known:
                raise AnnotationError(f"annotation refers to unknown image {a.image_id}")
            if a.image_id in seen:
                raise AnnotationError(f"image {a.image_id} has more than one annotation")
            seen.add(a.image_id)
            if a.keypoints.shape != (len(self.keypoint_names), 3):
                raise AnnotationError(f"image {a.image_id}: expected {len(self.keypoint_names)} keypoints")

    def by_image(self) -> dict[int, JointAnnotation2D]:
        return {a.image_id: a for a in self.annotations}

    def frames(self) -> list[int]:
        return sorted({im["frame"] for im in self.images})

    def camera_ids(self) -> list[str]:
        return sorted({im["camera_id"] for im in self.images})

    def lookup(self) -> dict[tuple[str, int], JointAnnotation2D]:
        """(camera id, frame) -> annotation."""
        return {(a.camera_id, a.frame): a for a in self.annotations}


@dataclass
class SceneSpec:
    rig: CameraRig
    model: bm.BodyModelData
    rotvecs: np.ndarray  # (T, J, 3)
    translations: np.ndarray  # (T, 3)
    betas: np.ndarray
    keypoint_names: tuple[str, ...] = bm.COCO_KEYPOINTS
    keypoint_joints: tuple[int, ...] | None = None  # model joint per keypoint; by name when None
    stride: int = 1
    seed: int = 0
    surface_tolerance: float = DEFAULT_SURFACE_TOLERANCE

    def __post_init__(self):
        if self.stride < 1:
            raise ValueError("stride must be >= 1")
        if self.keypoint_joints is None:
            self.keypoint_joints = tuple(self.model.tree.index(n) for n in self.keypoint_names)
        if len(self.keypoint_joints) != len(self.keypoint_names):
            raise ValueError("one model joint is needed per keypoint")

    @classmethod
    def from_motion(cls, rig: CameraRig, model: bm.BodyModelData, motion, **kw) -> "SceneSpec":
        """Accepts a generated motion or a fitted MotionSolution."""
        if hasattr(motion, "rotvecs") and callable(motion.rotvecs):
            return cls(rig, model, motion.rotvecs(), motion.translation, motion.betas, **kw)
        return cls(rig, model, motion.rotvecs, motion.translations, motion.betas, **kw)

    @property
    def n_frames(self) -> int:
        return self.rotvecs.shape[0]


def padded_bbox(keypoints: np.ndarray, padding: float = BBOX_PADDING) -> np.ndarray:
    vis = keypoints[:, 2] > 0
    if not np.any(vis):
        return np.zeros(4)
    lo = keypoints[vis, :2].min(axis=0)
    hi = keypoints[vis, :2].max(axis=0)
    ext = hi - lo
    lo = lo - padding * ext
    return np.array([lo[0], lo[1], (1 + 2 * padding) * ext[0], (1 + 2 * padding) * ext[1]])


def visibility_flags(in_image: np.ndarray, occluded: np.ndarray) -> np.ndarray:
    """v = 0 outside the image, else 1 when hidden by the body and 2 when seen."""
    in_image = np.asarray(in_image, dtype=bool)
    return np.where(~in_image, 0, np.where(np.asarray(occluded, dtype=bool), 1, 2))


def annotate_frame(scene: SceneSpec, frame_index: int) -> list[JointAnnotation2D]:
    """Annotations for every camera (rig order) at one frame.

    v = 0 when the joint projects outside the image, otherwise 2 when the
    camera ray reaches it unobstructed and 1 when it is hidden.
    """
    if not 0 <= frame_index < scene.n_frames:
        raise IndexError(f"frame {frame_index} outside [0, {scene.n_frames})")
    verts, joints = bm.pose_sequence(scene.rotvecs[frame_index:frame_index + 1],
                                     scene.translations[frame_index:frame_index + 1], scene.betas, scene.model)
    verts, joints = verts[0], joints[0][list(scene.keypoint_joints)]
    out = []
    for cam in scene.rig:
        uv, inside = project_joints(joints, cam)
        occluded = occlusion_flags(cam.extrinsics.centre, joints, verts, scene.model.faces, scene.surface_tolerance)
        v = visibility_flags(inside, occluded)
        kp = np.column_stack([uv, v.astype(float)])
        out.append(JointAnnotation2D(kp, padded_bbox(kp), cam.id, int(frame_index)))
    return out


def generate_annotations(scene: SceneSpec, frames: Sequence[int] | None = None) -> AnnotationSet:
    """Annotate every ``stride``-th frame; images are ordered by camera id, then frame."""
    frames = list(range(0, scene.n_frames, scene.stride)) if frames is None else list(frames)
    per_frame = {f: annotate_frame(scene, f) for f in frames}
    images, anns = [], []
    for cam in sorted(scene.rig.ids):
        k = scene.rig.ids.index(cam)
        intr = scene.rig[cam].intrinsics
        for f in frames:
            img_id = len(images) + 1
            images.append({"id": img_id, "file_name": f"{cam}/{f:06d}.png", "width": intr.width,
                           "height": intr.height, "camera_id": cam, "frame": f})
            a = per_frame[f][k]
            a.image_id = img_id
            anns.append(a)
    return AnnotationSet(images, anns, tuple(scene.keypoint_names))


# --------------------------------------------------------------------------- files

def _ann_to_dict(a: JointAnnotation2D) -> dict:
    d = {"id": a.image_id, "image_id": a.image_id, "category_id": 1,
         "keypoints": [float(x) for x in a.keypoints.ravel()],
         "num_keypoints": a.n_labelled, "bbox": [float(x) for x in a.bbox], "area": a.area, "iscrowd": 0,
         "camera_id": a.camera_id, "frame": a.frame}
    if a.score is not None:
        d["score"] = float(a.score)
    return d


def emit_annotations(ann: AnnotationSet, path: str | Path) -> Path:
    """Write COCO keypoints JSON.

    Layout: ``images`` (id, file_name, width, height, camera_id, frame),
    ``annotations`` (id, image_id, category_id, keypoints as flat
    [x, y, v] * K, num_keypoints, bbox [x, y, w, h], area, iscrowd,
    camera_id, frame, optional score) and one ``categories`` entry with
    keypoint names and 1-based skeleton edges.
    """
    ann.validate()
    doc = {
        "info": {"description": "synthetic multi-view keypoint annotations"},
        "images": ann.images,
        "annotations": [_ann_to_dict(a) for a in ann.annotations],
        "categories": [{"id": 1, "name": "person", "supercategory": "person",
                        "keypoints": list(ann.keypoint_names), "skeleton": [list(e) for e in ann.skeleton]}],
    }
    path = Path(path)
    path.write_text(json.dumps(doc, indent=1, sort_keys=True))
    return path


def load_annotations(path: str | Path) -> AnnotationSet:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise AnnotationError(f"{path}: {exc}") from None
    cat = doc["categories"][0]
    names = tuple(cat["keypoints"])
    images = [dict(im) for im in doc["images"]]
    frame_of = {im["id"]: im for im in images}
    anns = []
    for d in doc["annotations"]:
        im = frame_of.get(d["image_id"])
        if im is None:
            raise AnnotationError(f"annotation refers to unknown image {d['image_id']}")
        anns.append(JointAnnotation2D(np.asarray(d["keypoints"], dtype=float).reshape(-1, 3),
                                      np.asarray(d["bbox"], dtype=float), d.get("camera_id", im.get("camera_id")),
                                      int(d.get("frame", im.get("frame", 0))), int(d["image_id"]), d.get("score")))
    out = AnnotationSet(images, anns, names, tuple(tuple(e) for e in cat.get("skeleton", COCO_SKELETON)))
    out.validate()
    return out


# --------------------------------------------------------------------------- predictions

@dataclass
class PredictionNoise:
    """How ground-truth annotations are degraded into detector-like predictions."""

    pixel_sigma: float = 2.0
    outlier_rate: float = 0.05  # probability per keypoint of a gross error
    outlier_px: float = 60.0  # typical size of a gross error
    occluded_sigma_scale: float = 2.0  # occluded joints are localized worse
    confidence: float = 0.9
    outlier_confidence: float = 0.5


def make_predictions(gt: AnnotationSet, noise: PredictionNoise, seed: int = 0) -> AnnotationSet:
    """Perturb ground truth into predictions with per-keypoint confidences.

    Joints outside the image are still predicted, with low confidence.
    """
    rng = np.random.default_rng(seed)
    anns = []
    for a in gt.annotations:
        kp = a.keypoints.copy()
        v = kp[:, 2]
        sig = np.where(v == 1, noise.pixel_sigma * noise.occluded_sigma_scale, noise.pixel_sigma)
        xy = kp[:, :2] + rng.normal(size=(len(kp), 2)) * sig[:, None]
        out = rng.random(len(kp)) < noise.outlier_rate
        ang = rng.uniform(0, 2 * np.pi, len(kp))
        mag = noise.outlier_px * (0.5 + rng.random(len(kp)))
        xy[out] += np.column_stack([np.cos(ang[out]), np.sin(ang[out])]) * mag[out, None]
        conf = np.where(out, noise.outlier_confidence, noise.confidence) * rng.uniform(0.9, 1.0, len(kp))
        conf = np.where(v == 0, 0.1 * rng.random(len(kp)), conf)
        pk = np.column_stack([xy, conf])
        score = float(np.mean(conf))
        anns.append(JointAnnotation2D(pk, a.bbox.copy(), a.camera_id, a.frame, a.image_id, score))
    return AnnotationSet([dict(im) for im in gt.images], anns, gt.keypoint_names, gt.skeleton)
