"""Staged fitting of the body model to a filtered marker sequence."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .. import body_model as bm
from ..mocap import MarkerSequence
from ..optim import AdamConfig, GmmModel, LbfgsConfig, adam_minimize, lbfgs_minimize
from ..optim.lbfgs import OptimizationError
from ..rotations import interpolate_rotvecs, unwrap_rotvecs
from .correspondence import Correspondence, estimate_correspondence, posed_marker_points
from .loss import PARAMETER_GROUPS, FitLoss, FitParams, FitWeights
from .rough import rough_global_fit, sample_frames

logger = logging.getLogger(__name__)

OPTIMIZERS = ("lbfgs", "adam")


@dataclass
class StageSpec:
    optimizer: str
    free_parameters: tuple[str, ...]
    iterations: int
    weight_overrides: dict[str, float] = field(default_factory=dict)
    learning_rate: float = 1e-3  # Adam only
    name: str = ""

    def __post_init__(self):
        self.optimizer = self.optimizer.lower()
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"optimizer must be one of {OPTIMIZERS}, got {self.optimizer!r}")
        self.free_parameters = tuple(self.free_parameters)
        if not self.free_parameters or set(self.free_parameters) - set(PARAMETER_GROUPS):
            raise ValueError(f"free_parameters must be a nonempty subset of {PARAMETER_GROUPS}")
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")


def default_schedule() -> list[StageSpec]:
    return [
        # The global stages see the body through a wide kernel: with the pose still
        # off, most markers would otherwise sit in the flat tail of the 5 cm one.
        StageSpec("lbfgs", ("translation", "orientation"), 60, {"robust_scale": 0.5}, name="global-lbfgs"),
        StageSpec("adam", ("translation", "orientation"), 100, {"robust_scale": 0.2}, learning_rate=1e-3,
                  name="global-adam"),
        StageSpec("lbfgs", PARAMETER_GROUPS, 400, name="full-lbfgs"),
    ]


@dataclass
class FitConfig:
    n_sample_frames: int = 10
    max_key_interval: float | None = 0.1  # s between rough-fit keys
    downsample_stride: int = 10
    offset: float = bm.DEFAULT_MARKER_OFFSET
    coarse_iterations: int = 100
    coarse_robust_scales: tuple[float, ...] = (1.0, 0.3, 0.1)  # m, annealed before the final scale
    max_coarse_frames: int = 64  # frames used to estimate shape before windowing
    max_whole_sequence: int = 256  # longer sequences are fit in windows
    window: int = 64
    blend: int = 8
    gradient_tolerance: float = 1e-5
    function_tolerance: float = 1e-11

    def __post_init__(self):
        if self.window <= 2 * self.blend:
            raise ValueError("window must exceed twice the blend length")


@dataclass
class StageRecord:
    stage: int
    name: str
    optimizer: str
    free_parameters: tuple[str, ...]
    window: tuple[int, int]
    loss_before: float
    loss_after: float
    iterations: int
    reverted: bool = False
    message: str = ""

    def to_dict(self) -> dict:
        return {"stage": self.stage, "name": self.name, "optimizer": self.optimizer,
                "free_parameters": list(self.free_parameters), "window": list(self.window),
                "loss_before": self.loss_before, "loss_after": self.loss_after,
                "iterations": self.iterations, "reverted": self.reverted, "message": self.message}


@dataclass
class MotionSolution:
    translation: np.ndarray  # (T, 3)
    global_orient: np.ndarray  # (T, 3)
    joint_rotations: np.ndarray  # (T, J-1, 3)
    betas: np.ndarray  # (B,)
    frame_rate: float
    marker_names: list[str] = field(default_factory=list)
    residuals: np.ndarray | None = None  # (T, M) m, NaN where the marker is missing
    stage_log: list[StageRecord] = field(default_factory=list)
    correspondence: dict[str, int] = field(default_factory=dict)
    flags: list[str] = field(default_factory=list)

    def __post_init__(self):
        T = self.translation.shape[0]
        if self.global_orient.shape != (T, 3) or self.joint_rotations.shape[0] != T:
            raise ValueError("per-frame arrays disagree on the frame count")
        self.betas = np.asarray(self.betas, dtype=float).reshape(-1)

    @property
    def n_frames(self) -> int:
        return self.translation.shape[0]

    @property
    def shape(self) -> bm.BodyShape:
        return bm.BodyShape(self.betas)

    def rotvecs(self) -> np.ndarray:
        return np.concatenate([self.global_orient[:, None], self.joint_rotations], axis=1)

    def pose(self, t: int) -> bm.BodyPose:
        return bm.BodyPose(self.global_orient[t], self.joint_rotations[t], self.translation[t])

    @property
    def poses(self) -> list[bm.BodyPose]:
        return [self.pose(t) for t in range(self.n_frames)]

    def params(self) -> FitParams:
        return FitParams(self.translation.copy(), self.global_orient.copy(), self.joint_rotations.copy(),
                         self.betas.copy())

    def joints(self, model: bm.BodyModelData) -> np.ndarray:
        _, jp = bm.pose_sequence(self.rotvecs(), self.translation, self.betas, model)
        return jp


# ---------------------------------------------------------------------------- helpers

def _interpolate_params(key_frames: np.ndarray, keys: FitParams, n_frames: int) -> tuple[np.ndarray, ...]:
    t = np.arange(n_frames, dtype=float)
    kf = key_frames.astype(float)

    def lerp(a):
        flat = a.reshape(len(kf), -1)
        return np.stack([np.interp(t, kf, flat[:, i]) for i in range(flat.shape[1])], axis=1).reshape(
            (n_frames,) + a.shape[1:])

    trans = lerp(keys.translation)
    if len(kf) > 1:
        orient = unwrap_rotvecs(interpolate_rotvecs(kf, keys.orientation, t))
    else:
        orient = np.repeat(keys.orientation, n_frames, axis=0)
    return trans, orient, lerp(keys.pose)


def _run_stage(loss: FitLoss, params: FitParams, spec: StageSpec, cfg: FitConfig
               ) -> tuple[FitParams, float, float, int, bool, str]:
    free = spec.free_parameters
    fun = loss.objective(params, free)
    x0 = loss.pack(params, free)
    before = fun(x0).value
    if spec.iterations == 0:
        return params, before, before, 0, False, "skipped"
    try:
        if spec.optimizer == "lbfgs":
            res = lbfgs_minimize(fun, x0, LbfgsConfig(max_iterations=spec.iterations,
                                                      gradient_tolerance=cfg.gradient_tolerance,
                                                      function_tolerance=cfg.function_tolerance))
        else:
            res = adam_minimize(fun, x0, AdamConfig(learning_rate=spec.learning_rate,
                                                    max_iterations=spec.iterations))
    except OptimizationError as exc:
        return params, before, before, 0, True, f"aborted: {exc}"
    if not np.isfinite(res.value) or res.value > before:
        return params, before, before, res.iterations, True, f"diverged ({res.value:.6g} > {before:.6g})"
    return loss.unpack(res.x, params, free).copy(), before, res.value, res.iterations, False, res.message


def _windows(n_frames: int, cfg: FitConfig) -> list[tuple[int, int]]:
    if n_frames <= cfg.max_whole_sequence:
        return [(0, n_frames)]
    out, start, step = [], 0, cfg.window - cfg.blend
    while True:
        end = min(start + cfg.window, n_frames)
        out.append((start, end))
        if end == n_frames:
            return out
        start += step


# ---------------------------------------------------------------------------- main entry

def fit_sequence(seq: MarkerSequence, model: bm.BodyModelData, layout: bm.MarkerLayout,
                 schedule: Sequence[StageSpec] | None = None, weights: FitWeights | None = None,
                 gmm: GmmModel | None = None, correspondence: Correspondence | Mapping[str, int] | None = None,
                 config: FitConfig | None = None) -> MotionSolution:
    """Fit a per-frame body motion with one shared shape to ``seq``.

    Without an explicit ``correspondence`` the markers are first assigned to
    vertices: a rigid rough fit, a coarse pose fit on every
    ``downsample_stride``-th frame using the layout's seed vertices, then
    vote counting over those frames. The ``schedule`` stages then run in
    order, each changing only its free parameter groups. Sequences longer
    than ``max_whole_sequence`` frames are fit in overlapping windows with
    the shape frozen at the coarse estimate.
    """
    cfg = config or FitConfig()
    weights = weights or FitWeights()
    schedule = list(schedule) if schedule is not None else default_schedule()
    t0 = time.perf_counter()
    T = seq.n_frames
    if T == 0:
        raise ValueError("empty marker sequence")
    flags: list[str] = []

    rough = rough_global_fit(seq, layout, model, cfg.n_sample_frames, cfg.max_key_interval, cfg.offset)
    logger.info("rough fit on %d frames (%d skipped)", len(rough.sample_frames), len(rough.skipped_frames))

    # coarse pose + shape fit on a frame subset, with layout seed vertices
    layout_names = [n for n in seq.marker_names if n in layout and layout[n][1] is not None]
    coarse_frames = np.arange(0, T, cfg.downsample_stride)
    if len(coarse_frames) > cfg.max_coarse_frames:
        coarse_frames = coarse_frames[sample_frames(len(coarse_frames), cfg.max_coarse_frames)]
    lidx = np.array([seq.index(n) for n in layout_names])
    coarse = FitParams.zeros(len(coarse_frames), model)
    coarse.translation = rough.translation[coarse_frames].copy()
    coarse.orientation = rough.orientation[coarse_frames].copy()
    # A wide robust kernel first lets far-off limbs pull on the pose, then it
    # is narrowed so detached markers stop mattering.
    lvids = np.array([int(layout[n][1]) for n in layout_names])
    for scale in tuple(s for s in cfg.coarse_robust_scales if s > weights.robust_scale) + (weights.robust_scale,):
        cw = FitWeights(w_data=weights.w_data, w_smooth=0.0, w_pose_prior=weights.w_pose_prior,
                        w_shape_prior=weights.w_shape_prior, robust_scale=scale)
        coarse_loss = FitLoss(model, seq.positions[coarse_frames][:, lidx], lvids, cw, gmm, seq.frame_rate,
                              cfg.offset)
        for free in (("translation", "orientation"), PARAMETER_GROUPS):
            coarse, *_ = _run_stage(coarse_loss, coarse, StageSpec("lbfgs", free, cfg.coarse_iterations), cfg)

    if correspondence is None:
        corr = estimate_correspondence(seq, model, coarse, cfg.downsample_stride, cfg.offset, layout,
                                       fit_frames=coarse_frames)
    elif isinstance(correspondence, Correspondence):
        corr = correspondence
    else:
        corr = Correspondence({k: int(v) for k, v in correspondence.items()})
    names = [n for n in seq.marker_names if n in corr.marker_to_vertex]
    if len(names) < 4:
        raise ValueError(f"only {len(names)} markers have a vertex assignment")
    midx = np.array([seq.index(n) for n in names])
    vids = corr.vertices(names)

    trans, orient, pose = _interpolate_params(coarse_frames, coarse, T)
    params = FitParams(trans, orient, pose, coarse.betas.copy())
    leaves = [j - 1 for j in model.tree.leaves]
    params.pose[:, leaves] = 0.0

    windows = _windows(T, cfg)
    if len(windows) > 1:
        flags.append("windowed")
    log: list[StageRecord] = []
    result = params.copy()
    prev_end = 0
    for (s, e) in windows:
        block = result.frames(slice(s, e))
        for k, spec in enumerate(schedule):
            free = spec.free_parameters
            if len(windows) > 1 and "shape" in free:
                free = tuple(g for g in free if g != "shape")
                if not free:
                    continue
            spec_w = StageSpec(spec.optimizer, free, spec.iterations, spec.weight_overrides,
                               spec.learning_rate, spec.name)
            loss = FitLoss(model, seq.positions[s:e][:, midx], vids, weights.updated(spec.weight_overrides),
                           gmm, seq.frame_rate, cfg.offset)
            block, before, after, its, reverted, msg = _run_stage(loss, block, spec_w, cfg)
            log.append(StageRecord(k, spec.name or f"stage{k}", spec.optimizer, free, (s, e), before, after,
                                   its, reverted, msg))
            if reverted:
                logger.warning("stage %d on frames [%d, %d) reverted: %s", k, s, e, msg)
                flags.append(f"stage{k}-reverted@{s}")
            logger.info("stage %d [%d,%d) %s: %.6g -> %.6g in %d iterations", k, s, e, spec.optimizer,
                        before, after, its)
        # write back, cross-fading with the previous window's overlap
        overlap = max(0, prev_end - s)
        if overlap:
            a = (np.arange(overlap) + 1.0) / (overlap + 1.0)
            for attr in ("translation", "orientation", "pose"):
                old = getattr(result, attr)[s:s + overlap]
                new = getattr(block, attr)[:overlap]
                shape = (overlap,) + (1,) * (old.ndim - 1)
                getattr(result, attr)[s:s + overlap] = (1 - a.reshape(shape)) * old + a.reshape(shape) * new
        for attr in ("translation", "orientation", "pose"):
            getattr(result, attr)[s + overlap:e] = getattr(block, attr)[overlap:]
        if len(windows) == 1:
            result.betas = block.betas
        prev_end = e

    residuals = np.full((T, seq.n_markers), np.nan)
    pts = posed_marker_points(model, result.rotvecs(), result.translation, result.betas, vids, cfg.offset)
    d = np.linalg.norm(pts - seq.positions[:, midx], axis=2)
    residuals[:, midx] = d
    logger.info("fit finished in %.1f s; mean marker residual %.2f mm", time.perf_counter() - t0,
                1e3 * np.nanmean(d))
    return MotionSolution(result.translation, result.orientation, result.pose, result.betas, seq.frame_rate,
                          list(seq.marker_names), residuals, log, dict(corr.marker_to_vertex), flags)
