"""Rigid initialisation of translation and root orientation on a few sampled frames."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .. import body_model as bm
from ..mocap import MarkerSequence
from ..optim import LbfgsConfig, lbfgs_minimize
from ..rotations import interpolate_rotvecs, matrix_to_rotvec, unwrap_rotvecs
from .loss import FitLoss, FitParams, FitWeights

logger = logging.getLogger(__name__)


class RoughFitError(RuntimeError):
    pass


@dataclass
class RoughFit:
    sample_frames: np.ndarray  # frames that produced an estimate
    sample_translation: np.ndarray  # (S, 3)
    sample_orientation: np.ndarray  # (S, 3)
    translation: np.ndarray  # (T, 3) interpolated
    orientation: np.ndarray  # (T, 3) interpolated, unwrapped
    skipped_frames: np.ndarray


def kabsch(src: np.ndarray, dst: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Rotation R and translation t minimising |R src + t - dst|^2."""
    cs, cd = src.mean(axis=0), dst.mean(axis=0)
    H = (src - cs).T @ (dst - cd)
    U, _, Vt = np.linalg.svd(H)
    D = np.diag([1.0, 1.0, np.sign(np.linalg.det(Vt.T @ U.T))])
    R = Vt.T @ D @ U.T
    return R, cd - R @ cs


def sample_frames(n_frames: int, n_samples: int) -> np.ndarray:
    n_samples = max(1, min(n_samples, n_frames))
    return np.unique(np.round(np.linspace(0, n_frames - 1, n_samples)).astype(int))


def rough_global_fit(seq: MarkerSequence, layout: bm.MarkerLayout, model: bm.BodyModelData,
                     n_sample_frames: int = 10, max_key_interval: float | None = 0.1,
                     offset: float = bm.DEFAULT_MARKER_OFFSET, iterations: int = 50) -> RoughFit:
    """Estimate (translation, root orientation) with the body held in its rest pose.

    Each sampled frame gets a Procrustes alignment of the layout's seed
    points to the observed markers, refined by L-BFGS on the robust marker
    loss. When ``max_key_interval`` (seconds) is set, extra samples are added
    so that consecutive keys are never further apart than that; fast rotations
    would otherwise alias between keys. Other frames are interpolated.
    """
    names = [n for n in seq.marker_names if n in layout and layout[n][1] is not None]
    if len(names) < 4 or len({layout[n][0] for n in names}) < 2:
        raise RoughFitError("rough fit needs at least 4 layout markers on at least 2 segments")
    idx = np.array([seq.index(n) for n in names])
    vids = np.array([int(layout[n][1]) for n in names])
    rest_pts = model.template_vertices[vids] + offset * model.rest_normals[vids]

    n = n_sample_frames
    if max_key_interval is not None and seq.frame_rate > 0:
        n = max(n, int(np.ceil((seq.n_frames - 1) / (max_key_interval * seq.frame_rate))) + 1)
    frames = sample_frames(seq.n_frames, n)
    obs = seq.positions[frames][:, idx]
    keep, trans, rots = [], [], []
    for k, f in enumerate(frames):
        ok = np.all(np.isfinite(obs[k]), axis=1)
        if ok.sum() < 4:
            logger.debug("rough fit: frame %d has only %d valid markers; skipped", f, ok.sum())
            continue
        R, t = kabsch(rest_pts[ok], obs[k][ok])
        keep.append(k)
        trans.append(t)
        rots.append(matrix_to_rotvec(R))
    if not keep:
        raise RoughFitError("no sampled frame has 4 or more valid layout markers")
    keep = np.array(keep)
    skipped = np.setdiff1d(frames, frames[keep])

    params = FitParams.zeros(len(keep), model)
    params.translation = np.array(trans)
    params.orientation = unwrap_rotvecs(np.array(rots))
    loss = FitLoss(model, obs[keep], vids, FitWeights(w_smooth=0.0, w_pose_prior=0.0, w_shape_prior=0.0),
                   None, seq.frame_rate, offset)
    free = ("translation", "orientation")
    res = lbfgs_minimize(loss.objective(params, free), loss.pack(params, free),
                         LbfgsConfig(max_iterations=iterations, gradient_tolerance=1e-6))
    params = loss.unpack(res.x, params, free)
    key_frames = frames[keep]
    key_orient = unwrap_rotvecs(params.orientation)
    all_frames = np.arange(seq.n_frames)
    translation = np.stack([np.interp(all_frames, key_frames, params.translation[:, a]) for a in range(3)], axis=1)
    if len(key_frames) == 1:
        orientation = np.repeat(key_orient, seq.n_frames, axis=0)
    else:
        orientation = unwrap_rotvecs(interpolate_rotvecs(key_frames.astype(float), key_orient,
                                                         all_frames.astype(float)))
    return RoughFit(key_frames, params.translation.copy(), key_orient, translation, orientation, skipped)
