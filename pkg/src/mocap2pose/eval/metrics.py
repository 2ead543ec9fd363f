"""OKS, COCO-protocol AP/AR and MPJPE."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from ..synth.annotations import AnnotationSet, JointAnnotation2D

logger = logging.getLogger(__name__)

# per-keypoint falloff constants of the 17-keypoint COCO person category
COCO_SIGMAS = np.array([0.26, 0.25, 0.25, 0.35, 0.35, 0.79, 0.79, 0.72, 0.72, 0.62, 0.62,
                        1.07, 1.07, 0.87, 0.87, 0.89, 0.89]) / 10.0
RECALL_POINTS = np.linspace(0.0, 1.0, 101)


class UndefinedMetricError(ValueError):
    """The metric has no defined value for this input (nothing to compare)."""


def _default_thresholds() -> np.ndarray:
    return np.round(np.arange(0.50, 0.951, 0.05), 2)


@dataclass
class OksConfig:
    sigmas: np.ndarray = field(default_factory=lambda: COCO_SIGMAS.copy())
    thresholds: np.ndarray = field(default_factory=_default_thresholds)
    max_detections: int = 20  # per image, highest scores first

    def __post_init__(self):
        self.sigmas = np.asarray(self.sigmas, dtype=float)
        self.thresholds = np.asarray(self.thresholds, dtype=float)
        if np.any(self.sigmas <= 0):
            raise ValueError("sigmas must be positive")
        if self.thresholds.size == 0 or np.any(self.thresholds <= 0) or np.any(self.thresholds > 1):
            raise ValueError("OKS thresholds must lie in (0, 1]")


def oks(gt_keypoints: np.ndarray, pred_keypoints: np.ndarray, object_scale: float,
        config: OksConfig | None = None) -> float:
    """Object keypoint similarity of one prediction against one labelled person.

    ``object_scale`` is s^2, the ground-truth box area. Keypoints with v=0
    do not count.
    """
    cfg = config or OksConfig()
    gt = np.asarray(gt_keypoints, dtype=float)
    pr = np.asarray(pred_keypoints, dtype=float)
    if gt.shape[0] != pr.shape[0]:
        raise ValueError(f"keypoint counts differ: {gt.shape[0]} vs {pr.shape[0]}")
    if cfg.sigmas.shape[0] != gt.shape[0]:
        raise ValueError(f"{cfg.sigmas.shape[0]} sigmas for {gt.shape[0]} keypoints")
    labelled = gt[:, 2] > 0
    if not np.any(labelled):
        raise UndefinedMetricError("no labelled keypoints")
    d2 = np.sum((pr[:, :2] - gt[:, :2]) ** 2, axis=1)
    k2 = (2 * cfg.sigmas) ** 2
    e = d2 / (2.0 * k2 * (object_scale + np.spacing(1)))
    return float(np.mean(np.exp(-e[labelled])))


class ApAr(NamedTuple):
    ap: float
    ap50: float
    ar: float
    ar50: float


def _group(ann: AnnotationSet) -> dict[int, list[JointAnnotation2D]]:
    out: dict[int, list[JointAnnotation2D]] = {}
    for a in ann.annotations:
        out.setdefault(a.image_id, []).append(a)
    return out


def _box_similarity(gt: JointAnnotation2D, det: JointAnnotation2D, cfg: OksConfig) -> float:
    """Similarity to an unlabelled person: distance to a box three times the gt box."""
    x, y, w, h = gt.bbox
    xd, yd = det.keypoints[:, 0], det.keypoints[:, 1]
    dx = np.maximum(0, (x - w) - xd) + np.maximum(0, xd - (x + 2 * w))
    dy = np.maximum(0, (y - h) - yd) + np.maximum(0, yd - (y + 2 * h))
    e = (dx ** 2 + dy ** 2) / (2.0 * (2 * cfg.sigmas) ** 2 * (gt.area + np.spacing(1)))
    return float(np.mean(np.exp(-e)))


def _match_image(dts: list[JointAnnotation2D], gts: list[JointAnnotation2D], cfg: OksConfig):
    """Greedy score-ordered matching of one image at every threshold.

    Returns (scores, matched (T, D), ignored (T, D), n non-ignored gts).
    Ground truth without labelled keypoints is ignored; detections matched
    to it are ignored too.
    """
    dts = sorted(dts, key=lambda d: -(d.score or 0.0))[:cfg.max_detections]  # stable
    g_ignore = np.array([g.n_labelled == 0 for g in gts], dtype=bool)
    order = np.argsort(g_ignore, kind="mergesort")
    gts = [gts[i] for i in order]
    g_ignore = g_ignore[order]
    ious = np.zeros((len(dts), len(gts)))
    for i, d in enumerate(dts):
        for j, g in enumerate(gts):
            ious[i, j] = oks(g.keypoints, d.keypoints, g.area, cfg) if not g_ignore[j] else _box_similarity(g, d, cfg)
    T = len(cfg.thresholds)
    matched = np.zeros((T, len(dts)), dtype=bool)
    d_ignore = np.zeros((T, len(dts)), dtype=bool)
    for ti, thr in enumerate(cfg.thresholds):
        g_taken = np.zeros(len(gts), dtype=bool)
        for di in range(len(dts)):
            best_iou, m = min(thr, 1 - 1e-10), -1
            for gi in range(len(gts)):
                if g_taken[gi]:
                    continue
                if m > -1 and not g_ignore[m] and g_ignore[gi]:
                    break
                if ious[di, gi] < best_iou:
                    continue
                best_iou, m = ious[di, gi], gi
            if m == -1:
                continue
            g_taken[m] = True
            matched[ti, di] = True
            d_ignore[ti, di] = g_ignore[m]
    scores = np.array([d.score or 0.0 for d in dts])
    return scores, matched, d_ignore, int(np.count_nonzero(~g_ignore))


def ap_ar(predictions: AnnotationSet, ground_truths: AnnotationSet, config: OksConfig | None = None) -> ApAr:
    """COCO keypoint AP/AR (101-point interpolated precision, score-ranked matching)."""
    cfg = config or OksConfig()
    if not ground_truths.annotations:
        raise UndefinedMetricError("no ground-truth annotations")
    gt_by = _group(ground_truths)
    dt_by = _group(predictions)
    unknown = set(dt_by) - {im["id"] for im in ground_truths.images}
    if unknown:
        raise ValueError(f"predictions for unknown images: {sorted(unknown)[:5]}")
    scores, matched, ignored, n_pos = [], [], [], 0
    for img in sorted({im["id"] for im in ground_truths.images}):
        gts, dts = gt_by.get(img, []), dt_by.get(img, [])
        if not gts and not dts:
            continue
        s, m, ig, n = _match_image(dts, gts, cfg)
        scores.append(s)
        matched.append(m)
        ignored.append(ig)
        n_pos += n
    if n_pos == 0:
        raise UndefinedMetricError("no ground truth with labelled keypoints")
    T = len(cfg.thresholds)
    s = np.concatenate(scores) if scores else np.zeros(0)
    order = np.argsort(-s, kind="mergesort")
    m = np.concatenate(matched, axis=1)[:, order] if scores else np.zeros((T, 0), bool)
    ig = np.concatenate(ignored, axis=1)[:, order] if scores else np.zeros((T, 0), bool)
    precision = np.zeros(T)
    recall = np.zeros(T)
    for t in range(T):
        tp = np.cumsum(m[t] & ~ig[t]).astype(float)
        fp = np.cumsum(~m[t] & ~ig[t]).astype(float)
        if tp.size == 0:
            continue
        rc = tp / n_pos
        pr = tp / (tp + fp + np.spacing(1))
        recall[t] = rc[-1]
        pr = np.maximum.accumulate(pr[::-1])[::-1]  # precision envelope
        idx = np.searchsorted(rc, RECALL_POINTS, side="left")
        q = np.zeros(len(RECALL_POINTS))
        ok = idx < len(pr)
        q[ok] = pr[idx[ok]]
        precision[t] = q.mean()
    i50 = int(np.argmin(np.abs(cfg.thresholds - 0.5)))
    if abs(cfg.thresholds[i50] - 0.5) > 1e-9:
        logger.warning("OKS threshold 0.5 not in the configured list; AP50/AR50 use %.2f", cfg.thresholds[i50])
    return ApAr(float(precision.mean()), float(precision[i50]), float(recall.mean()), float(recall[i50]))


def mpjpe(predicted: np.ndarray, reference: np.ndarray, valid_mask: np.ndarray | None = None,
          reference_mask: np.ndarray | None = None, strict: bool = True) -> float:
    """Mean per-joint position error in millimetres; inputs are in metres.

    Only joints valid in both sets count: masks default to "finite". With
    ``strict`` an empty intersection raises, otherwise it gives NaN.
    """
    p = np.asarray(predicted, dtype=float)
    r = np.asarray(reference, dtype=float)
    if p.shape != r.shape:
        raise ValueError(f"shape mismatch {p.shape} vs {r.shape}")
    both = np.all(np.isfinite(p), axis=-1) & np.all(np.isfinite(r), axis=-1)
    if valid_mask is not None:
        both &= np.asarray(valid_mask, dtype=bool)
    if reference_mask is not None:
        both &= np.asarray(reference_mask, dtype=bool)
    if not np.any(both):
        if strict:
            raise UndefinedMetricError("no joint is valid in both pose sets")
        return float("nan")
    return float(1000.0 * np.mean(np.linalg.norm(p[both] - r[both], axis=-1)))
