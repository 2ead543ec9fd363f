"""Triangulation quality over every camera combination of a rig."""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

from ..multiview.cameras import CameraRig
from ..multiview.triangulation import (TriangulatedJoint, TriangulationConfig, _attempt, filter_observations,
                                       normalize_observations, subset_search, triangulate_pose)
from ..synth.annotations import AnnotationSet
from .metrics import mpjpe

logger = logging.getLogger(__name__)

FramePredictions = Mapping[str, np.ndarray]  # camera id -> (K, 3) of u, v, confidence


def predictions_by_frame(ann: AnnotationSet, use_visibility: bool = False) -> tuple[list[int], list[dict]]:
    """Regroup an annotation set into per-frame camera -> (K, 3) arrays.

    With ``use_visibility`` the third column (v flags of ground truth) is
    turned into a confidence of 1 for labelled and 0 for unlabelled joints.
    """
    frames: dict[int, dict[str, np.ndarray]] = {}
    for a in ann.annotations:
        kp = a.keypoints.copy()
        if use_visibility:
            kp[:, 2] = (kp[:, 2] > 0).astype(float)
        frames.setdefault(a.frame, {})[a.camera_id] = kp
    order = sorted(frames)
    return order, [frames[f] for f in order]


def triangulate_frames(predictions: Sequence[FramePredictions], rig: CameraRig,
                       config: TriangulationConfig | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Positions (F, K, 3), NaN where invalid, and validity flags (F, K)."""
    pos, valid = [], []
    for frame in predictions:
        joints = triangulate_pose(frame, rig, config)
        pos.append([j.position if j.valid else np.full(3, np.nan) for j in joints])
        valid.append([j.valid for j in joints])
    return np.array(pos, dtype=float).reshape(len(predictions), -1, 3), np.array(valid, dtype=bool).reshape(
        len(predictions), -1)


def reference_from_annotations(gt: AnnotationSet, rig: CameraRig, config: TriangulationConfig | None = None
                               ) -> tuple[list[int], np.ndarray, np.ndarray]:
    """Reference 3D from labelled 2D in all views: (frames, positions, valid)."""
    frames, preds = predictions_by_frame(gt, use_visibility=True)
    pos, valid = triangulate_frames(preds, rig, config)
    return frames, pos, valid


class _SubsetCache:
    """Memoized DLT attempts per (frame, keypoint, camera subset).

    A subset's triangulation does not depend on the enclosing combination
    or on the reprojection threshold, so one cache serves the whole sweep.
    """

    def __init__(self, predictions: Sequence[FramePredictions], rig: CameraRig, config: TriangulationConfig):
        self.rig = rig
        self.config = config
        self.n_frames = len(predictions)
        ks = {np.asarray(a).shape[0] for p in predictions for a in p.values()}
        if len(ks) > 1:
            raise ValueError(f"inconsistent keypoint counts: {sorted(ks)}")
        self.n_keypoints = ks.pop() if ks else 0
        self.obs = []  # [f][k] -> {cam: px}
        for frame in predictions:
            arrays = {cid: np.asarray(a, dtype=float) for cid, a in frame.items()}
            self.obs.append([filter_observations([(cid, a[k, :2], float(a[k, 2])) for cid, a in arrays.items()],
                                                 config) for k in range(self.n_keypoints)])
        self._memo: dict[tuple[int, int, tuple[str, ...]], object] = {}
        self._norm: dict[tuple[int, int], dict[str, np.ndarray]] = {}

    def attempt(self, f: int, k: int, sub: tuple[str, ...]):
        key = (f, k, sub)
        if key not in self._memo:
            if (f, k) not in self._norm:
                self._norm[(f, k)] = normalize_observations(self.obs[f][k], self.rig)
            self._memo[key] = _attempt(self.obs[f][k], sub, self.rig, self.config.statistic, self._norm[(f, k)])
        return self._memo[key]

    def search(self, f: int, k: int, cameras: Sequence[str], config: TriangulationConfig) -> TriangulatedJoint:
        allowed = set(cameras)
        ids = [c for c in self.obs[f][k] if c in allowed]
        return subset_search(ids, lambda sub: self.attempt(f, k, tuple(sub)), config)

    def min_statistic(self, f: int, k: int, cameras: Sequence[str], min_cameras: int) -> float:
        """Lowest pooled error over subsets of ``cameras`` with at least ``min_cameras`` views."""
        allowed = set(cameras)
        ids = sorted(c for c in self.obs[f][k] if c in allowed)
        best = np.inf
        for size in range(min_cameras, len(ids) + 1):
            for sub in itertools.combinations(ids, size):
                res = self.attempt(f, k, sub)
                if res is not None and res[2] < best:
                    best = res[2]
        return float(best)


@dataclass
class CombinationResult:
    cameras: tuple[str, ...]
    positions: np.ndarray  # (F, K, 3), NaN where invalid
    valid: np.ndarray  # (F, K)
    mpjpe_mm: float  # pooled over joint-frames valid here and in the reference; NaN if none
    valid_fraction: float

    @property
    def n_cameras(self) -> int:
        return len(self.cameras)


@dataclass
class CombinationSweep:
    n_range: tuple[int, ...]
    results: dict[int, list[CombinationResult]]
    reference: np.ndarray  # (F, K, 3)
    reference_valid: np.ndarray  # (F, K)
    config: TriangulationConfig
    camera_ids: tuple[str, ...]
    _cache: _SubsetCache | None = field(default=None, repr=False)

    def counts(self) -> dict[int, int]:
        return {n: len(r) for n, r in self.results.items()}

    def mpjpe_by_n(self) -> dict[int, np.ndarray]:
        return {n: np.array([r.mpjpe_mm for r in rs]) for n, rs in self.results.items()}

    def all_results(self) -> list[CombinationResult]:
        return [r for n in self.n_range for r in self.results[n]]


def combination_sweep(predictions: Sequence[FramePredictions], rig: CameraRig, reference_3d: np.ndarray,
                      n_range: Sequence[int] | None = None, config: TriangulationConfig | None = None,
                      reference_valid: np.ndarray | None = None) -> CombinationSweep:
    """Triangulate with every camera subset of each size in ``n_range``.

    ``predictions`` holds one camera -> (K, 3) mapping per frame and
    ``reference_3d`` the matching (F, K, 3) positions in metres. Subsets are
    enumerated in sorted-id lexicographic order.
    """
    cfg = config or TriangulationConfig()
    ids = tuple(sorted(rig.ids))
    n_range = tuple(range(cfg.min_cameras, len(ids) + 1)) if n_range is None else tuple(sorted(set(n_range)))
    if not n_range:
        raise ValueError("empty range of camera counts")
    if max(n_range) > len(ids) or min(n_range) < 2:
        raise ValueError(f"camera counts {n_range} outside [2, {len(ids)}]")
    ref = np.asarray(reference_3d, dtype=float)
    if ref.ndim != 3 or ref.shape[0] != len(predictions):
        raise ValueError(f"reference shape {ref.shape} does not match {len(predictions)} frames")
    ref_valid = np.all(np.isfinite(ref), axis=-1) if reference_valid is None else np.asarray(reference_valid, bool)
    cache = _SubsetCache(predictions, rig, cfg)
    if cache.n_keypoints != ref.shape[1]:
        raise ValueError(f"{cache.n_keypoints} predicted keypoints vs {ref.shape[1]} reference joints")
    F, K = ref.shape[:2]
    results: dict[int, list[CombinationResult]] = {}
    for n in n_range:
        rs = []
        for sub in itertools.combinations(ids, n):
            pos = np.full((F, K, 3), np.nan)
            valid = np.zeros((F, K), dtype=bool)
            for f in range(F):
                for k in range(K):
                    j = cache.search(f, k, sub, cfg)
                    if j.valid:
                        pos[f, k], valid[f, k] = j.position, True
            err = mpjpe(pos, ref, valid, ref_valid, strict=False)
            rs.append(CombinationResult(sub, pos, valid, err, float(valid.mean()) if valid.size else 0.0))
        results[n] = rs
        logger.info("N=%d: %d combinations, median MPJPE %.1f mm", n, len(rs),
                    np.nanmedian([r.mpjpe_mm for r in rs]) if any(np.isfinite(r.mpjpe_mm) for r in rs) else np.nan)
    return CombinationSweep(n_range, results, ref, ref_valid, cfg, ids, cache)


@dataclass
class ThresholdCurves:
    thresholds: np.ndarray
    curves: dict[int, np.ndarray]  # camera count -> value per threshold


def valid_joint_fraction(sweep: CombinationSweep, reproj_thresholds: Sequence[float]) -> ThresholdCurves:
    """Mean fraction of valid joints per camera count at each reprojection threshold.

    A joint is valid exactly when some subset of at least ``min_cameras``
    confident views triangulates below the threshold, so each joint's
    lowest achievable error is computed once and compared with every
    threshold.
    """
    thr = np.asarray(reproj_thresholds, dtype=float)
    cache = sweep._cache
    if cache is None:
        raise ValueError("sweep has no triangulation inputs attached")
    F, K = sweep.reference.shape[:2]
    curves = {}
    for n in sweep.n_range:
        fr = []
        for r in sweep.results[n]:
            m = np.array([[cache.min_statistic(f, k, r.cameras, sweep.config.min_cameras) for k in range(K)]
                          for f in range(F)]).reshape(-1)
            fr.append((m[None, :] <= thr[:, None]).mean(axis=1) if m.size else np.zeros(len(thr)))
        curves[n] = np.mean(fr, axis=0)
    return ThresholdCurves(thr, curves)


def valid_joint_fraction_rerun(sweep: CombinationSweep, reproj_thresholds: Sequence[float]) -> ThresholdCurves:
    """Same curves as :func:`valid_joint_fraction` by repeating the subset search per threshold (slower)."""
    thr = np.asarray(reproj_thresholds, dtype=float)
    cache = sweep._cache
    F, K = sweep.reference.shape[:2]
    curves = {}
    for n in sweep.n_range:
        vals = np.zeros((len(thr), len(sweep.results[n])))
        for ti, t in enumerate(thr):
            cfg = replace(sweep.config, reproj_threshold_px=float(t))
            for ci, r in enumerate(sweep.results[n]):
                vals[ti, ci] = np.mean([cache.search(f, k, r.cameras, cfg).valid for f in range(F) for k in range(K)])
        curves[n] = vals.mean(axis=1)
    return ThresholdCurves(thr, curves)


def combinations_below_threshold(sweep: CombinationSweep, mpjpe_thresholds_mm: Sequence[float]) -> ThresholdCurves:
    """Fraction of combinations per camera count whose MPJPE is at most each threshold.

    Combinations without any valid joint never count as below.
    """
    thr = np.asarray(mpjpe_thresholds_mm, dtype=float)
    curves = {}
    for n, errs in sweep.mpjpe_by_n().items():
        e = np.where(np.isfinite(errs), errs, np.inf)
        curves[n] = (e[None, :] <= thr[:, None]).mean(axis=1)
    return ThresholdCurves(thr, curves)
