"""Marker-to-vertex assignment by vote counting over a downsampled sequence."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .. import body_model as bm
from ..mocap import MarkerSequence
from .loss import FitParams

logger = logging.getLogger(__name__)


@dataclass
class Correspondence:
    marker_to_vertex: dict[str, int]
    support_counts: dict[str, dict[int, int]] = field(default_factory=dict)
    excluded: list[str] = field(default_factory=list)

    def vertices(self, names: Sequence[str]) -> np.ndarray:
        return np.array([self.marker_to_vertex[n] for n in names], dtype=int)

    @classmethod
    def from_layout(cls, layout: bm.MarkerLayout) -> "Correspondence":
        return cls({n: int(v) for n, (_, v) in layout.items() if v is not None})


def posed_marker_points(model: bm.BodyModelData, rotvecs: np.ndarray, translations: np.ndarray,
                        betas: np.ndarray, vertex_ids: np.ndarray,
                        offset: float = bm.DEFAULT_MARKER_OFFSET) -> np.ndarray:
    """Virtual markers (T, M, 3) on posed vertices, pushed out along posed normals.

    Only the one-ring faces of the requested vertices are skinned, so this is
    cheap enough for long sequences.
    """
    vertex_ids = np.asarray(vertex_ids, dtype=int)
    rotvecs = np.asarray(rotvecs, dtype=float)
    faces = model.faces
    touched = np.isin(faces, vertex_ids).any(axis=1)
    sub_faces = faces[touched]
    sub_verts, local = np.unique(np.concatenate([sub_faces.ravel(), vertex_ids]), return_inverse=True)
    local_faces = local[:sub_faces.size].reshape(-1, 3)
    local_ids = local[sub_faces.size:]

    jr = bm.rest_joints(betas, model)
    _, Rw, pw = bm.global_transforms(rotvecs, np.asarray(translations, dtype=float), jr, model.tree.parents)
    T, J = Rw.shape[:2]
    b = pw - (Rw @ jr[None, :, :, None])[..., 0]
    W = model.skin_weights[sub_verts]
    rest = bm.rest_vertices(betas, model)[sub_verts]
    Rv = (W @ Rw.reshape(T, J, 9)).reshape(T, -1, 3, 3)
    verts = (Rv @ rest[None, :, :, None])[..., 0] + W @ b  # (T, S, 3)

    tri = verts[:, local_faces]  # (T, F, 3, 3)
    fn = np.cross(tri[:, :, 1] - tri[:, :, 0], tri[:, :, 2] - tri[:, :, 0])  # area weighted
    incid = (local_faces[None, :, :] == local_ids[:, None, None]).any(axis=2).astype(float)  # (M, F)
    normals = incid @ fn
    normals /= np.maximum(np.linalg.norm(normals, axis=-1, keepdims=True), 1e-300)
    return verts[:, local_ids] + offset * normals


def _posed_surface(model: bm.BodyModelData, params: FitParams, frames: np.ndarray, offset: float,
                   chunk: int = 16) -> np.ndarray:
    """Offset surface points (len(frames), V, 3) for the given frames."""
    out = np.empty((len(frames), model.n_vertices, 3))
    rv = params.rotvecs()
    for i in range(0, len(frames), chunk):
        f = frames[i:i + chunk]
        verts, _ = bm.pose_sequence(rv[f], params.translation[f], params.betas, model)
        out[i:i + chunk] = verts + offset * bm.vertex_normals(verts, model.faces)
    return out


def estimate_correspondence(seq: MarkerSequence, model: bm.BodyModelData, current_fit: FitParams,
                            downsample_stride: int = 10, offset: float = bm.DEFAULT_MARKER_OFFSET,
                            layout: bm.MarkerLayout | None = None,
                            fit_frames: np.ndarray | None = None) -> Correspondence:
    """Vote each marker onto its nearest offset vertex in every ``downsample_stride``-th frame.

    ``current_fit`` covers either every frame of ``seq`` or exactly the frames
    listed in ``fit_frames``. When ``layout`` names a segment for a marker,
    only vertices dominated by that segment's joint are candidates. The
    winner has the most votes; ties go to the smaller mean distance and then
    to the lower vertex index.
    """
    if downsample_stride < 1:
        raise ValueError("downsample_stride must be >= 1")
    if fit_frames is None:
        if current_fit.n_frames != seq.n_frames:
            raise ValueError(f"fit covers {current_fit.n_frames} frames, sequence has {seq.n_frames}")
        frames = np.arange(0, seq.n_frames, downsample_stride)
        rows = frames
    else:
        fit_frames = np.asarray(fit_frames, dtype=int)
        if len(fit_frames) != current_fit.n_frames:
            raise ValueError("fit_frames must list one sequence frame per fitted frame")
        frames, rows = fit_frames, np.arange(len(fit_frames))
    surface = _posed_surface(model, current_fit, rows, offset)
    obs = seq.positions[frames]  # (F, M, 3)
    valid = np.all(np.isfinite(obs), axis=2)

    seg_of_vertex = model.vertex_segment
    all_vertices = np.arange(model.n_vertices)
    candidates: dict[int, np.ndarray] = {}
    result: dict[str, int] = {}
    support: dict[str, dict[int, int]] = {}
    excluded: list[str] = []
    for m, name in enumerate(seq.marker_names):
        cand = all_vertices
        if layout is not None and name in layout:
            seg = model.tree.index(layout[name][0])
            if seg not in candidates:
                c = np.flatnonzero(seg_of_vertex == seg)
                candidates[seg] = c if c.size else all_vertices
            cand = candidates[seg]
        fr = np.flatnonzero(valid[:, m])
        if fr.size == 0:
            logger.warning("marker %s has no valid samples on the voting frames; excluded", name)
            excluded.append(name)
            continue
        d = np.linalg.norm(surface[fr][:, cand] - obs[fr, m][:, None, :], axis=2)  # (n, C)
        best = np.argmin(d, axis=1)
        votes = np.bincount(best, minlength=cand.size)
        dist_sum = np.bincount(best, weights=d[np.arange(len(fr)), best], minlength=cand.size)
        top = votes.max()
        tied = np.flatnonzero(votes == top)
        mean_d = dist_sum[tied] / top
        order = np.lexsort((cand[tied], mean_d))
        winner = int(cand[tied[order[0]]])
        result[name] = winner
        support[name] = {int(cand[i]): int(votes[i]) for i in np.flatnonzero(votes)}
    return Correspondence(result, support, excluded)


def correspondence_from_mapping(mapping: Mapping[str, int]) -> Correspondence:
    return Correspondence({k: int(v) for k, v in mapping.items()})
