"""Linear triangulation and the camera-subset search used to reject bad views."""

from __future__ import annotations

import itertools
import logging
import warnings
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .cameras import Camera, CameraRig, project, undistort

logger = logging.getLogger(__name__)

STATISTICS = ("mean", "max")


class DegenerateGeometryError(ValueError):
    pass


@dataclass
class TriangulationConfig:
    min_cameras: int = 3
    reproj_threshold_px: float = 15.0
    likelihood_threshold: float = 0.3
    statistic: str = "mean"  # how per-camera reprojection errors are pooled

    def __post_init__(self):
        if self.min_cameras < 2:
            raise ValueError("min_cameras must be >= 2")
        if self.reproj_threshold_px <= 0:
            raise ValueError("reproj_threshold_px must be positive")
        if not 0.0 <= self.likelihood_threshold <= 1.0:
            raise ValueError("likelihood_threshold must lie in [0, 1]")
        if self.statistic not in STATISTICS:
            raise ValueError(f"statistic must be one of {STATISTICS}")


@dataclass
class TriangulatedJoint:
    position: np.ndarray  # (3,), NaN when nothing could be triangulated
    valid: bool
    cameras_used: tuple[str, ...] = ()
    mean_reproj_error_px: float = float("nan")
    reproj_errors_px: dict[str, float] = field(default_factory=dict)

    @property
    def error_px(self) -> float:
        return self.mean_reproj_error_px


def _pool(errors: np.ndarray, statistic: str) -> float:
    return float(errors.max() if statistic == "max" else errors.mean())


def dlt_triangulate(observations: Sequence[tuple[str, np.ndarray]], rig: CameraRig,
                    normalized: Mapping[str, np.ndarray] | None = None) -> tuple[np.ndarray, dict[str, float]]:
    """Least-squares point from two or more views and its reprojection errors (px).

    Pixels are undistorted first (or looked up in ``normalized``, keyed by
    camera id, when the caller has already done it); each view adds two rows
    to the homogeneous system, whose smallest right singular vector is the
    solution.
    """
    if len(observations) < 2:
        raise ValueError("need at least two observations")
    ids = [cid for cid, _ in observations]
    if len(set(ids)) != len(ids):
        raise ValueError(f"duplicate cameras in observations: {ids}")
    rows, rays = [], []
    for cid, px in observations:
        cam = rig[cid]
        if normalized is not None and cid in normalized:
            xn = normalized[cid]
        else:
            xn, _ = undistort(np.asarray(px, dtype=float), cam.intrinsics)
        P = np.hstack([cam.extrinsics.rotation, cam.extrinsics.translation[:, None]])
        rows.append(xn[0] * P[2] - P[0])
        rows.append(xn[1] * P[2] - P[1])
        d = cam.extrinsics.rotation.T @ np.array([xn[0], xn[1], 1.0])
        rays.append(d / np.linalg.norm(d))
    rays = np.array(rays)
    cross = np.linalg.norm(np.cross(rays[:, None], rays[None, :]), axis=-1)
    if cross.max() < 1e-8:
        raise DegenerateGeometryError("all viewing rays are parallel")
    A = np.array(rows)
    # column scaling keeps the system well conditioned for far-away scenes
    scale = np.maximum(np.abs(A).max(axis=0), 1e-12)
    _, s, Vt = np.linalg.svd(A / scale)
    X = Vt[-1] / scale
    if abs(X[3]) < 1e-12 * np.abs(X[:3]).max():
        raise DegenerateGeometryError("triangulated point is at infinity")
    point = X[:3] / X[3]
    errors = {}
    for cid, px in observations:
        uv, _ = project(point, rig[cid])
        errors[cid] = float(np.linalg.norm(uv - np.asarray(px, dtype=float)))
    return point, errors


def normalize_observations(obs: Mapping[str, np.ndarray], rig: CameraRig) -> dict[str, np.ndarray]:
    """Undistorted normalized coordinates of each view, computed once per search."""
    return {cid: undistort(px, rig[cid].intrinsics)[0] for cid, px in obs.items()}


def _attempt(obs: dict[str, np.ndarray], ids: Sequence[str], rig: CameraRig, statistic: str,
             normalized: Mapping[str, np.ndarray] | None = None):
    try:
        point, errs = dlt_triangulate([(i, obs[i]) for i in ids], rig, normalized)
    except DegenerateGeometryError:
        return None
    return point, errs, _pool(np.array([errs[i] for i in ids]), statistic)


def filter_observations(observations: Sequence[tuple[str, np.ndarray, float]],
                        config: TriangulationConfig) -> dict[str, np.ndarray]:
    """Views passing the likelihood threshold with finite pixels, keyed by camera id."""
    obs = {}
    for cid, px, conf in observations:
        px = np.asarray(px, dtype=float)
        if conf >= config.likelihood_threshold and np.all(np.isfinite(px)):
            obs[cid] = px
    return obs


def subset_search(ids: Sequence[str], attempt, config: TriangulationConfig) -> TriangulatedJoint:
    """Largest-subset search over ``ids`` given ``attempt(subset) -> (point, errors, stat) | None``.

    ``attempt`` is called with sorted id tuples, so callers can memoize it
    across searches that share cameras.
    """
    cfg = config
    ids = sorted(ids)
    best = None  # (stat, ids, point, errs)

    def record(sub, res):
        nonlocal best
        if res is not None and (best is None or res[2] < best[0]):
            best = (res[2], tuple(sub), res[0], res[1])

    def accept(sub, res):
        return TriangulatedJoint(res[0], True, tuple(sub), res[2], {i: res[1][i] for i in sub})

    greedy = list(ids)
    for size in range(len(ids), cfg.min_cameras - 1, -1):
        if len(greedy) == size:
            res = attempt(tuple(greedy))
            record(greedy, res)
            if res is not None and res[2] <= cfg.reproj_threshold_px:
                return accept(greedy, res)
        passing = None
        for sub in itertools.combinations(ids, size):
            if list(sub) == greedy:
                continue
            res = attempt(sub)
            record(sub, res)
            if res is not None and res[2] <= cfg.reproj_threshold_px and (passing is None or res[2] < passing[1][2]):
                passing = (sub, res)
        if passing is not None:
            return accept(*passing)
        # drop the worst camera of the greedy candidate (lowest id on ties)
        if len(greedy) == size and size > cfg.min_cameras:
            res = attempt(tuple(greedy))
            if res is None:
                greedy = greedy[:-1]
            else:
                errs = res[1]
                worst = max(greedy, key=lambda i: (errs[i], -greedy.index(i)))
                greedy = [i for i in greedy if i != worst]
    if best is None:
        return TriangulatedJoint(np.full(3, np.nan), False)
    stat, sub, point, errs = best
    return TriangulatedJoint(point, False, sub, stat, {i: errs[i] for i in sub})


def robust_triangulate_joint(observations: Sequence[tuple[str, np.ndarray, float]], rig: CameraRig,
                             config: TriangulationConfig | None = None) -> TriangulatedJoint:
    """Triangulate with the largest camera subset whose reprojection error passes.

    Views below the likelihood threshold are discarded. Subset sizes are
    tried from all remaining views down to ``min_cameras``. At each size the
    greedy candidate (previous candidate minus its worst camera) is tried
    first; if it fails, every subset of that size is tried and the passing
    one with the lowest error wins. Camera ids are sorted before the search,
    so the result does not depend on the order of ``observations``.
    """
    cfg = config or TriangulationConfig()
    obs = filter_observations(observations, cfg)
    norm = normalize_observations(obs, rig)
    return subset_search(list(obs), lambda sub: _attempt(obs, sub, rig, cfg.statistic, norm), cfg)


def triangulate_pose(keypoints: Mapping[str, np.ndarray], rig: CameraRig,
                     config: TriangulationConfig | None = None) -> list[TriangulatedJoint]:
    """Triangulate every keypoint independently.

    ``keypoints`` maps camera id to a (K, 3) array of (u, v, confidence);
    all cameras must list the same K keypoints.
    """
    arrays = {cid: np.asarray(k, dtype=float) for cid, k in keypoints.items()}
    counts = {a.shape[0] for a in arrays.values()}
    if len(counts) > 1:
        raise ValueError(f"cameras disagree on the keypoint count: {sorted(counts)}")
    n = counts.pop() if counts else 0
    out = []
    for k in range(n):
        obs = [(cid, a[k, :2], float(a[k, 2])) for cid, a in arrays.items()]
        out.append(robust_triangulate_joint(obs, rig, config))
    return out


@dataclass
class CalibrationCheck:
    rmse_px: float
    per_camera_rmse_px: dict[str, float]
    n_points: int
    warning: bool


def calibration_roundtrip_check(rig: CameraRig, sample_points: np.ndarray, warn_above_px: float = 2.0,
                                observations: Mapping[str, np.ndarray] | None = None) -> CalibrationCheck:
    """Triangulate sample points from all views and report the reprojection RMSE.

    ``observations`` maps camera id to (N, 2) measured pixels of the sample
    points (NaN rows = unseen); without it the points are projected through
    ``rig`` itself, which checks the rig's internal consistency only.
    """
    if len(rig) < 2:
        raise ValueError("calibration check needs at least two cameras")
    pts = np.atleast_2d(np.asarray(sample_points, dtype=float))
    if observations is None:
        observations = {}
        for cam in rig:
            uv, front = project(pts, cam)
            observations[cam.id] = np.where(front[:, None], uv, np.nan)
    sq: dict[str, list[float]] = {c.id: [] for c in rig}
    n = 0
    for i in range(len(pts)):
        obs = [(cid, np.asarray(px, dtype=float)[i]) for cid, px in observations.items()
               if np.all(np.isfinite(np.asarray(px, dtype=float)[i]))]
        if len(obs) < 2:
            continue
        _, errs = dlt_triangulate(obs, rig)
        for cid, e in errs.items():
            sq[cid].append(e * e)
        n += 1
    all_sq = [v for vals in sq.values() for v in vals]
    rmse = float(np.sqrt(np.mean(all_sq))) if all_sq else float("nan")
    per_cam = {cid: float(np.sqrt(np.mean(v))) if v else float("nan") for cid, v in sq.items()}
    warn = bool(rmse > warn_above_px)
    logger.info("calibration round trip: RMSE %.3g px over %d points", rmse, n)
    if warn:
        msg = f"calibration round-trip RMSE {rmse:.3f} px exceeds {warn_above_px} px"
        logger.warning(msg)
        warnings.warn(msg, RuntimeWarning)
    return CalibrationCheck(rmse, per_cam, n, warn)
