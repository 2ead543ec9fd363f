"""Marker fitting objective with an analytic gradient through the skinning chain."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Iterable, Mapping

import numpy as np

from .. import body_model as bm
from ..optim import GmmModel, ObjectiveEval, gmm_neg_log_prob
from ..rotations import rodrigues_jacobian

PARAMETER_GROUPS = ("translation", "orientation", "pose", "shape")


@dataclass
class FitWeights:
    w_data: float = 1.0
    w_smooth: float = 0.1
    w_pose_prior: float = 1e-3
    w_shape_prior: float = 1e-2
    robust_scale: float = 0.05  # m, Geman-McClure width
    reference_rate: float = 100.0  # Hz at which w_smooth applies unscaled

    def __post_init__(self):
        for k in ("w_data", "w_smooth", "w_pose_prior", "w_shape_prior"):
            if getattr(self, k) < 0:
                raise ValueError(f"{k} must be >= 0")
        if self.robust_scale <= 0 or self.reference_rate <= 0:
            raise ValueError("robust_scale and reference_rate must be positive")

    def updated(self, overrides: Mapping[str, float] | None) -> "FitWeights":
        return replace(self, **dict(overrides)) if overrides else self


@dataclass
class FitParams:
    """Per-frame body parameters for a block of frames plus one shared shape."""

    translation: np.ndarray  # (T, 3)
    orientation: np.ndarray  # (T, 3) root rotvec, may be unwrapped past pi
    pose: np.ndarray  # (T, J-1, 3)
    betas: np.ndarray  # (B,)

    @property
    def n_frames(self) -> int:
        return self.translation.shape[0]

    @classmethod
    def zeros(cls, n_frames: int, model: bm.BodyModelData) -> "FitParams":
        return cls(np.zeros((n_frames, 3)), np.zeros((n_frames, 3)),
                   np.zeros((n_frames, model.n_joints - 1, 3)), np.zeros(model.n_betas))

    def copy(self) -> "FitParams":
        return FitParams(self.translation.copy(), self.orientation.copy(), self.pose.copy(), self.betas.copy())

    def frames(self, sl) -> "FitParams":
        return FitParams(self.translation[sl].copy(), self.orientation[sl].copy(), self.pose[sl].copy(),
                         self.betas.copy())

    def rotvecs(self) -> np.ndarray:
        return np.concatenate([self.orientation[:, None], self.pose], axis=1)


def optimized_joints(model: bm.BodyModelData) -> np.ndarray:
    """Non-root joints whose rotation is a free parameter (leaves stay fixed)."""
    leaves = set(model.tree.leaves)
    return np.array([j for j in range(1, model.n_joints) if j not in leaves], dtype=int)


def prior_dimension(model: bm.BodyModelData) -> int:
    return 3 * len(optimized_joints(model))


class FitLoss:
    """Objective over a block of frames for a fixed marker-to-vertex assignment.

    The virtual marker for vertex v is the rest-space point
    ``v_rest(betas) + offset * n_rest`` carried through the skinning
    transforms. Call ``evaluate`` on a FitParams, or use ``objective`` to get a
    flat-vector callable over a chosen subset of parameter groups.
    """

    def __init__(self, model: bm.BodyModelData, observed: np.ndarray, marker_vertices: np.ndarray,
                 weights: FitWeights | None = None, gmm: GmmModel | None = None, frame_rate: float = 100.0,
                 offset: float = bm.DEFAULT_MARKER_OFFSET):
        self.model = model
        self.weights = weights or FitWeights()
        obs = np.asarray(observed, dtype=float)
        if obs.ndim != 3 or obs.shape[2] != 3:
            raise ValueError("observed markers must be (T, M, 3)")
        self.marker_vertices = np.asarray(marker_vertices, dtype=int)
        if obs.shape[1] != self.marker_vertices.size:
            raise ValueError(f"{obs.shape[1]} observed markers but {self.marker_vertices.size} vertices")
        self.mask = np.all(np.isfinite(obs), axis=2)
        self.observed = np.where(self.mask[..., None], obs, 0.0)
        self.frame_rate = float(frame_rate)
        self.parents = model.tree.parents
        self.pose_joints = optimized_joints(model)
        self.gmm = gmm
        if gmm is not None and gmm.dim != 3 * len(self.pose_joints):
            raise ValueError(f"pose prior has dimension {gmm.dim}, expected {3 * len(self.pose_joints)}")
        v = self.marker_vertices
        self.W = model.skin_weights[v]  # (M, J)
        self.q0 = model.template_vertices[v] + offset * model.rest_normals[v]  # (M, 3)
        self.qS = model.shape_basis[v]  # (M, 3, B)
        self.JT = model.joint_template
        self.JS = model.joint_shape_basis

    @property
    def n_frames(self) -> int:
        return self.observed.shape[0]

    @property
    def smooth_scale(self) -> float:
        # second differences shrink with rate^2, so squared ones with rate^4
        return (self.frame_rate / self.weights.reference_rate) ** 4

    # ------------------------------------------------------------------ forward

    def marker_positions(self, params: FitParams) -> np.ndarray:
        """Virtual markers (T, M, 3) under ``params``."""
        Jr = self.JT + self.JS @ params.betas
        q = self.q0 + self.qS @ params.betas
        _, Rw, pw = bm.global_transforms(params.rotvecs(), params.translation, Jr, self.parents)
        return self._blend(Rw, pw, Jr, q)[1]

    def _blend(self, Rw, pw, Jr, q):
        """Per-marker blended rotations (T, M, 3, 3) and marker positions (T, M, 3)."""
        T, J = Rw.shape[:2]
        b = pw - (Rw @ Jr[None, :, :, None])[..., 0]
        Rm = (self.W @ Rw.reshape(T, J, 9)).reshape(T, -1, 3, 3)
        x = (Rm @ q[None, :, :, None])[..., 0] + self.W @ b
        return Rm, x

    def evaluate(self, params: FitParams, need_grad: bool = True) -> tuple[float, dict[str, np.ndarray] | None]:
        w = self.weights
        T = params.n_frames
        if T != self.n_frames:
            raise ValueError(f"parameters cover {T} frames, observations {self.n_frames}")
        if params.pose.shape[1:] != (self.model.n_joints - 1, 3) or params.betas.shape != (self.model.n_betas,):
            raise ValueError("parameter dimensions do not match the body model")
        betas = params.betas
        Jr = self.JT + self.JS @ betas
        q = self.q0 + self.qS @ betas
        rv = params.rotvecs()
        R_loc, Rw, pw = bm.global_transforms(rv, params.translation, Jr, self.parents)
        Rm, x = self._blend(Rw, pw, Jr, q)

        # robust data term
        s2 = w.robust_scale ** 2
        e = np.where(self.mask[..., None], x - self.observed, 0.0)
        r2 = np.einsum("tma,tma->tm", e, e)
        value = w.w_data * float(np.sum(r2 / (r2 + s2)))

        # temporal smoothing on second differences
        ss = w.w_smooth * self.smooth_scale
        smooth_tracks = (params.translation, params.orientation, params.pose[:, self.pose_joints - 1].reshape(T, -1))
        smooth_grads = []
        for track in smooth_tracks:
            if T >= 3 and ss > 0:
                d2 = track[2:] - 2 * track[1:-1] + track[:-2]
                value += ss * float(np.sum(d2 * d2))
                if need_grad:
                    g2 = 2 * ss * d2
                    g = np.zeros_like(track)
                    g[2:] += g2
                    g[1:-1] -= 2 * g2
                    g[:-2] += g2
                    smooth_grads.append(g)
            elif need_grad:
                smooth_grads.append(np.zeros_like(track))

        prior_grad = None
        if self.gmm is not None and w.w_pose_prior > 0:
            nll, gp = gmm_neg_log_prob(self.gmm, params.pose[:, self.pose_joints - 1].reshape(T, -1))
            value += w.w_pose_prior * float(np.sum(nll))
            prior_grad = w.w_pose_prior * gp
        value += w.w_shape_prior * float(betas @ betas)
        if not need_grad:
            return value, None

        # ---- backward through the data term
        g = (w.w_data * 2 * s2 / (r2 + s2) ** 2)[..., None] * e  # dL/dx, zero where missing
        Tn, J = Rw.shape[:2]
        Wt = self.W.T
        gR = (Wt @ (g[..., :, None] * q[None, :, None, :]).reshape(Tn, -1, 9)).reshape(Tn, J, 3, 3)
        gb = Wt @ g
        gq = (np.swapaxes(Rm, -1, -2) @ g[..., None])[..., 0].sum(axis=0)
        gbeta = np.tensordot(gq, self.qS, axes=([0, 1], [0, 1]))
        # b = pw - Rw Jr
        gp_ = gb.copy()
        gR -= gb[..., :, None] * Jr[None, :, None, :]
        gJ = -(np.swapaxes(Rw, -1, -2) @ gb[..., None])[..., 0].sum(axis=0)

        # ---- backward through the kinematic chain
        gRloc = np.empty_like(R_loc)
        for j in range(len(self.parents) - 1, 0, -1):
            p = self.parents[j]
            Rp = Rw[:, p]
            gRloc[:, j] = np.einsum("tba,tbc->tac", Rp, gR[:, j])
            gR[:, p] += np.einsum("tab,tcb->tac", gR[:, j], R_loc[:, j])
            dJ = Jr[j] - Jr[p]
            gR[:, p] += gp_[:, j, :, None] * dJ[None, None, :]
            t_ = np.einsum("tba,tb->a", Rp, gp_[:, j])
            gJ[j] += t_
            gJ[p] -= t_
            gp_[:, p] += gp_[:, j]
        gRloc[:, 0] = gR[:, 0] + gp_[:, 0, :, None] * Jr[0][None, None, :]
        gJ[0] += np.einsum("tba,tb->a", R_loc[:, 0], gp_[:, 0])
        gbeta += np.einsum("jcb,jc->b", self.JS, gJ)
        grv = np.einsum("tjab,tjiab->tji", gRloc, rodrigues_jacobian(rv))

        g_trans = gp_[:, 0] + smooth_grads[0]
        g_orient = grv[:, 0] + smooth_grads[1]
        g_pose = np.zeros_like(params.pose)
        g_pose[:, self.pose_joints - 1] = grv[:, self.pose_joints]
        extra = smooth_grads[2]
        if prior_grad is not None:
            extra = extra + prior_grad
        g_pose[:, self.pose_joints - 1] += extra.reshape(T, -1, 3)
        gbeta += 2 * w.w_shape_prior * betas
        return value, {"translation": g_trans, "orientation": g_orient, "pose": g_pose, "shape": gbeta}

    # ------------------------------------------------------------------ flat interface

    def _slices(self, free: Iterable[str]) -> list[tuple[str, np.ndarray]]:
        free = tuple(free)
        bad = set(free) - set(PARAMETER_GROUPS)
        if bad or not free:
            raise ValueError(f"free parameters must be a nonempty subset of {PARAMETER_GROUPS}, got {free}")
        return [g for g in PARAMETER_GROUPS if g in free]

    def pack(self, params: FitParams, free: Iterable[str]) -> np.ndarray:
        parts = []
        for group in self._slices(free):
            if group == "translation":
                parts.append(params.translation.ravel())
            elif group == "orientation":
                parts.append(params.orientation.ravel())
            elif group == "pose":
                parts.append(params.pose[:, self.pose_joints - 1].ravel())
            else:
                parts.append(params.betas.ravel())
        return np.concatenate(parts)

    def unpack(self, x: np.ndarray, base: FitParams, free: Iterable[str]) -> FitParams:
        out = FitParams(base.translation, base.orientation, base.pose, base.betas)
        T, i = base.n_frames, 0
        for group in self._slices(free):
            if group == "translation":
                out.translation = x[i:i + 3 * T].reshape(T, 3)
                i += 3 * T
            elif group == "orientation":
                out.orientation = x[i:i + 3 * T].reshape(T, 3)
                i += 3 * T
            elif group == "pose":
                n = 3 * len(self.pose_joints) * T
                pose = base.pose.copy()
                pose[:, self.pose_joints - 1] = x[i:i + n].reshape(T, -1, 3)
                out.pose = pose
                i += n
            else:
                out.betas = x[i:i + base.betas.size]
                i += base.betas.size
        if i != x.size:
            raise ValueError(f"parameter vector has {x.size} entries, expected {i}")
        return out

    def objective(self, base: FitParams, free: Iterable[str]):
        """Flat objective ``x -> ObjectiveEval`` over the ``free`` groups of ``base``."""
        groups = self._slices(free)

        def fun(x: np.ndarray) -> ObjectiveEval:
            params = self.unpack(x, base, groups)
            val, grads = self.evaluate(params)
            gvec = []
            for group in groups:
                g = grads[group]
                if group == "pose":
                    g = g[:, self.pose_joints - 1]
                gvec.append(g.ravel())
            return ObjectiveEval(val, np.concatenate(gvec))

        return fun


def fit_loss(params: FitParams, observed: np.ndarray, model: bm.BodyModelData, marker_vertices,
             weights: FitWeights | None = None, gmm: GmmModel | None = None, frame_rate: float = 100.0,
             free: Iterable[str] = PARAMETER_GROUPS) -> ObjectiveEval:
    """Loss and gradient (over the ``free`` groups, packed flat) for one block of frames."""
    loss = FitLoss(model, observed, marker_vertices, weights, gmm, frame_rate)
    return loss.objective(params, free)(loss.pack(params, free))
