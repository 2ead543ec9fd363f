"""Parametric skinned body: kinematics, linear blend skinning and synthetic markers.

Conventions: world +z is up, meters and radians throughout. A pose is an
axis-angle per joint (root first); the root rotation acts about the world
origin and is followed by the translation, so a pure root rotation rigidly
rotates the whole rest mesh about the origin.

Pose-corrective blendshapes are not modelled. ``BodyModelData`` has no slot
for them; adding one would only touch :func:`rest_vertices`.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import mesh as meshlib
from .rotations import rodrigues

logger = logging.getLogger(__name__)

DEFAULT_MARKER_OFFSET = 0.0095  # m above the skin
FORMAT_TAG = "mocap2pose-body-v1"


class BodyModelError(ValueError):
    pass


@dataclass(frozen=True)
class KinematicTree:
    parents: tuple[int, ...]
    joint_names: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "parents", tuple(int(p) for p in self.parents))
        object.__setattr__(self, "joint_names", tuple(str(n) for n in self.joint_names))
        self.validate()

    @property
    def joint_count(self) -> int:
        return len(self.parents)

    def validate(self) -> None:
        if len(self.parents) != len(self.joint_names):
            raise BodyModelError("parents and joint_names differ in length")
        if not self.parents or self.parents[0] != -1:
            raise BodyModelError("joint 0 must be the root (parent -1)")
        for j, p in enumerate(self.parents[1:], start=1):
            if not 0 <= p < j:
                raise BodyModelError(f"joint {j} has parent {p}; tree must be topologically ordered")
        if len(set(self.joint_names)) != len(self.joint_names):
            raise BodyModelError("duplicate joint names")

    def index(self, name: str) -> int:
        try:
            return self.joint_names.index(name)
        except ValueError:
            raise BodyModelError(f"unknown joint {name!r}") from None

    @cached_property
    def leaves(self) -> tuple[int, ...]:
        has_child = set(self.parents[1:])
        return tuple(j for j in range(self.joint_count) if j not in has_child)


@dataclass(eq=False)
class BodyModelData:
    template_vertices: np.ndarray  # (V, 3)
    faces: np.ndarray  # (F, 3)
    shape_basis: np.ndarray  # (V, 3, B)
    joint_regressor: np.ndarray  # (J, V)
    skin_weights: np.ndarray  # (V, J)
    tree: KinematicTree
    rest_normals_: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        self.template_vertices = np.asarray(self.template_vertices, dtype=float)
        self.faces = np.asarray(self.faces, dtype=np.int64)
        self.shape_basis = np.asarray(self.shape_basis, dtype=float)
        self.joint_regressor = np.asarray(self.joint_regressor, dtype=float)
        self.skin_weights = np.asarray(self.skin_weights, dtype=float)
        self.validate()

    @property
    def n_vertices(self) -> int:
        return self.template_vertices.shape[0]

    @property
    def n_joints(self) -> int:
        return self.tree.joint_count

    @property
    def n_betas(self) -> int:
        return self.shape_basis.shape[2]

    @property
    def joint_names(self) -> tuple[str, ...]:
        return self.tree.joint_names

    def validate(self) -> None:
        V, J = self.n_vertices, self.tree.joint_count
        if self.template_vertices.shape != (V, 3):
            raise BodyModelError("template_vertices must be (V, 3)")
        if self.faces.ndim != 2 or self.faces.shape[1] != 3:
            raise BodyModelError("faces must be (F, 3)")
        if self.faces.min() < 0 or self.faces.max() >= V:
            raise BodyModelError("faces index vertices out of range")
        if self.shape_basis.ndim != 3 or self.shape_basis.shape[:2] != (V, 3):
            raise BodyModelError("shape_basis must be (V, 3, B)")
        if self.joint_regressor.shape != (J, V):
            raise BodyModelError(f"joint_regressor must be ({J}, {V})")
        if self.skin_weights.shape != (V, J):
            raise BodyModelError(f"skin_weights must be ({V}, {J})")
        for name, arr in (("joint_regressor", self.joint_regressor), ("skin_weights", self.skin_weights)):
            if np.any(arr < 0):
                raise BodyModelError(f"{name} has negative entries")
            if np.max(np.abs(arr.sum(axis=1) - 1.0)) > 1e-6:
                raise BodyModelError(f"{name} rows must sum to 1")
        area2 = np.linalg.norm(meshlib.face_normals(self.template_vertices, self.faces), axis=1)
        if np.any(area2 <= 0):
            raise BodyModelError("template mesh has zero-area faces")

    # cached linear maps used by the fitting code
    @cached_property
    def joint_template(self) -> np.ndarray:
        return self.joint_regressor @ self.template_vertices

    @cached_property
    def joint_shape_basis(self) -> np.ndarray:
        return np.einsum("jv,vcb->jcb", self.joint_regressor, self.shape_basis)

    @cached_property
    def rest_normals(self) -> np.ndarray:
        if self.rest_normals_ is not None:
            return self.rest_normals_
        return meshlib.vertex_normals(self.template_vertices, self.faces)

    @cached_property
    def vertex_segment(self) -> np.ndarray:
        """Joint that dominates each vertex's skinning."""
        return np.argmax(self.skin_weights, axis=1)

    @cached_property
    def adjacency(self) -> list[set[int]]:
        return meshlib.vertex_adjacency(self.n_vertices, self.faces)


@dataclass
class BodyPose:
    global_orient: np.ndarray  # (3,)
    joint_rotations: np.ndarray  # (J-1, 3)
    translation: np.ndarray  # (3,)

    def __post_init__(self):
        self.global_orient = np.asarray(self.global_orient, dtype=float).reshape(3)
        self.joint_rotations = np.asarray(self.joint_rotations, dtype=float).reshape(-1, 3)
        self.translation = np.asarray(self.translation, dtype=float).reshape(3)
        if not (np.all(np.isfinite(self.global_orient)) and np.all(np.isfinite(self.joint_rotations))
                and np.all(np.isfinite(self.translation))):
            raise BodyModelError("pose contains non-finite values")

    @classmethod
    def zero(cls, n_joints: int) -> "BodyPose":
        return cls(np.zeros(3), np.zeros((n_joints - 1, 3)), np.zeros(3))

    def rotvecs(self) -> np.ndarray:
        """All joint rotations with the root first, (J, 3)."""
        return np.vstack([self.global_orient[None], self.joint_rotations])


@dataclass
class BodyShape:
    betas: np.ndarray

    def __post_init__(self):
        self.betas = np.asarray(self.betas, dtype=float).reshape(-1)
        if not np.all(np.isfinite(self.betas)):
            raise BodyModelError("betas contain non-finite values")
        if np.any(np.abs(self.betas) > 10):
            logger.warning("betas beyond +-10 are implausible: %s", self.betas)

    @classmethod
    def zero(cls, n_betas: int) -> "BodyShape":
        return cls(np.zeros(n_betas))


MarkerLayout = Mapping[str, tuple[str, "int | None"]]
"""marker name -> (segment joint name, optional seed vertex index)."""


def validate_layout(layout: MarkerLayout, model: BodyModelData) -> None:
    for name, (segment, seed) in layout.items():
        if not name:
            raise BodyModelError("empty marker name in layout")
        model.tree.index(segment)
        if seed is not None and not 0 <= int(seed) < model.n_vertices:
            raise BodyModelError(f"seed vertex {seed} of marker {name!r} out of range")


# --------------------------------------------------------------------------- kinematics

def _check_dims(rotvecs: np.ndarray, betas: np.ndarray, model: BodyModelData) -> None:
    if rotvecs.shape[-2:] != (model.n_joints, 3):
        raise BodyModelError(f"expected {model.n_joints} joint rotations, got shape {rotvecs.shape}")
    if betas.shape[-1] != model.n_betas:
        raise BodyModelError(f"expected {model.n_betas} betas, got {betas.shape[-1]}")


def rest_joints(betas: np.ndarray, model: BodyModelData) -> np.ndarray:
    return model.joint_template + model.joint_shape_basis @ np.asarray(betas, dtype=float)


def rest_vertices(betas: np.ndarray, model: BodyModelData) -> np.ndarray:
    return model.template_vertices + model.shape_basis @ np.asarray(betas, dtype=float)


def global_transforms(rotvecs: np.ndarray, translation: np.ndarray, joints_rest: np.ndarray,
                      parents: Sequence[int]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Chain local rotations down the tree.

    ``rotvecs`` is (..., J, 3) with the root first, ``translation`` (..., 3).
    Returns ``(R_local, R_world, p_world)``: local rotation matrices, world
    orientations (..., J, 3, 3) and world joint positions (..., J, 3).
    """
    R_local = rodrigues(rotvecs)
    J = len(parents)
    R_world = np.empty_like(R_local)
    p_world = np.empty(R_local.shape[:-1])
    R_world[..., 0, :, :] = R_local[..., 0, :, :]
    p_world[..., 0, :] = np.einsum("...ij,j->...i", R_local[..., 0, :, :], joints_rest[0]) + translation
    for j in range(1, J):
        p = parents[j]
        Rp = R_world[..., p, :, :]
        R_world[..., j, :, :] = Rp @ R_local[..., j, :, :]
        p_world[..., j, :] = np.einsum("...ij,j->...i", Rp, joints_rest[j] - joints_rest[p]) + p_world[..., p, :]
    return R_local, R_world, p_world


def forward_kinematics(pose: BodyPose, shape: BodyShape, model: BodyModelData) -> np.ndarray:
    """World transforms of every joint, (J, 4, 4).

    The rotation block is the joint's world orientation and the translation
    column its world position.
    """
    rv = pose.rotvecs()
    _check_dims(rv, shape.betas, model)
    _, Rw, pw = global_transforms(rv, pose.translation, rest_joints(shape.betas, model), model.tree.parents)
    G = np.zeros((model.n_joints, 4, 4))
    G[:, :3, :3] = Rw
    G[:, :3, 3] = pw
    G[:, 3, 3] = 1.0
    return G


def skinning_transforms(G: np.ndarray, joints_rest: np.ndarray) -> np.ndarray:
    """Transforms mapping rest-space points to posed space per joint."""
    A = G.copy()
    A[..., :3, 3] = G[..., :3, 3] - np.einsum("...ij,...j->...i", G[..., :3, :3], joints_rest)
    return A


def skin_vertices(pose: BodyPose, shape: BodyShape, model: BodyModelData) -> np.ndarray:
    G = forward_kinematics(pose, shape, model)
    A = skinning_transforms(G, rest_joints(shape.betas, model))
    v_rest = rest_vertices(shape.betas, model)
    T = np.einsum("vj,jab->vab", model.skin_weights, A)
    return np.einsum("vab,vb->va", T[:, :3, :3], v_rest) + T[:, :3, 3]


def joint_positions(pose: BodyPose, shape: BodyShape, model: BodyModelData) -> np.ndarray:
    return forward_kinematics(pose, shape, model)[:, :3, 3]


def pose_sequence(rotvecs: np.ndarray, translations: np.ndarray, betas: np.ndarray,
                  model: BodyModelData) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised skinning of a whole motion: returns (vertices (T,V,3), joints (T,J,3))."""
    rotvecs = np.asarray(rotvecs, dtype=float)
    betas = np.asarray(betas, dtype=float)
    _check_dims(rotvecs, betas, model)
    jr = rest_joints(betas, model)
    _, Rw, pw = global_transforms(rotvecs, np.asarray(translations, dtype=float), jr, model.tree.parents)
    b = pw - np.einsum("tjab,jb->tja", Rw, jr)
    v_rest = rest_vertices(betas, model)
    Rv = np.einsum("vj,tjab->tvab", model.skin_weights, Rw)
    bv = np.einsum("vj,tja->tva", model.skin_weights, b)
    verts = np.einsum("tvab,vb->tva", Rv, v_rest) + bv
    return verts, pw


def vertex_normals(vertices: np.ndarray, faces: np.ndarray) -> np.ndarray:
    return meshlib.vertex_normals(vertices, faces)


def synthetic_markers(posed_vertices: np.ndarray, normals: np.ndarray,
                      correspondence: Mapping[str, int],
                      offset: float = DEFAULT_MARKER_OFFSET) -> dict[str, np.ndarray]:
    """Virtual markers floating ``offset`` meters above their vertices."""
    if offset < 0:
        raise BodyModelError("marker offset must be non-negative")
    V = posed_vertices.shape[0]
    out = {}
    for name, vid in correspondence.items():
        vid = int(vid)
        if not 0 <= vid < V:
            raise BodyModelError(f"marker {name!r} references vertex {vid} outside [0, {V})")
        out[name] = posed_vertices[vid] + offset * normals[vid]
    return out


# --------------------------------------------------------------------------- procedural body

COCO_KEYPOINTS = (
    "nose", "left_eye", "right_eye", "left_ear", "right_ear",
    "left_shoulder", "right_shoulder", "left_elbow", "right_elbow",
    "left_wrist", "right_wrist", "left_hip", "right_hip",
    "left_knee", "right_knee", "left_ankle", "right_ankle",
)

TEST_BODY_JOINTS = (
    ("pelvis", -1), ("left_hip", 0), ("right_hip", 0), ("spine", 0),
    ("left_knee", 1), ("right_knee", 2), ("chest", 3),
    ("left_ankle", 4), ("right_ankle", 5), ("neck", 6),
    ("left_shoulder", 6), ("right_shoulder", 6), ("head", 9),
    ("left_elbow", 10), ("right_elbow", 11), ("left_wrist", 13), ("right_wrist", 14),
    ("nose", 12), ("left_eye", 12), ("right_eye", 12), ("left_ear", 12), ("right_ear", 12),
    ("left_toe", 7), ("right_toe", 8),
)


@dataclass
class TestBodyConfig:
    """Dimensions of the capsule humanoid (meters). The body faces -y; left is +x."""

    hip_width: float = 0.09
    hip_drop: float = 0.06
    thigh: float = 0.42
    shin: float = 0.42
    foot: float = 0.14
    lower_spine: float = 0.12
    mid_spine: float = 0.2
    upper_spine: float = 0.2
    neck: float = 0.1
    shoulder_width: float = 0.17
    shoulder_drop: float = 0.04
    upper_arm: float = 0.28
    forearm: float = 0.25
    head_radius: float = 0.095
    torso_radius: float = 0.105
    pelvis_radius: float = 0.09
    thigh_radius: float = 0.07
    shin_radius: float = 0.05
    foot_radius: float = 0.04
    upper_arm_radius: float = 0.045
    forearm_radius: float = 0.038
    neck_radius: float = 0.05
    girdle_radius: float = 0.06
    n_around: int = 12
    n_rings: int = 6
    n_cap: int = 2
    n_betas: int = 10
    blend_fraction: float = 0.15
    seed: int = 0


def _rest_joint_positions(c: TestBodyConfig) -> dict[str, np.ndarray]:
    P = {}
    P["pelvis"] = np.zeros(3)
    P["left_hip"] = np.array([c.hip_width, 0.0, -c.hip_drop])
    P["right_hip"] = np.array([-c.hip_width, 0.0, -c.hip_drop])
    P["spine"] = np.array([0.0, 0.0, c.lower_spine])
    for side, s in (("left", 1.0), ("right", -1.0)):
        P[f"{side}_knee"] = P[f"{side}_hip"] + [0, 0, -c.thigh]
        P[f"{side}_ankle"] = P[f"{side}_knee"] + [0, 0, -c.shin]
        P[f"{side}_toe"] = P[f"{side}_ankle"] + [0, -c.foot, -0.04]
    P["chest"] = P["spine"] + [0, 0, c.mid_spine]
    P["neck"] = P["chest"] + [0, 0, c.upper_spine]
    P["head"] = P["neck"] + [0, 0, c.neck]
    for side, s in (("left", 1.0), ("right", -1.0)):
        P[f"{side}_shoulder"] = P["neck"] + [s * c.shoulder_width, 0, -c.shoulder_drop]
        P[f"{side}_elbow"] = P[f"{side}_shoulder"] + [s * c.upper_arm, 0, 0]
        P[f"{side}_wrist"] = P[f"{side}_elbow"] + [s * c.forearm, 0, 0]
    return P


def build_test_body(config: TestBodyConfig | None = None) -> BodyModelData:
    """Capsule-limb humanoid with 24 joints in a T-pose, deterministic per seed.

    Every COCO keypoint name is a joint of the model. Shape component 0 is a
    global isotropic scale about the origin (+10 % per unit); the remaining
    components change bone lengths and limb thickness with seeded random
    coefficients.
    """
    c = config or TestBodyConfig()
    if c.n_around < 4 or c.n_rings < 2 or c.n_cap < 0:
        raise BodyModelError("mesh resolution below the minimum (each segment needs >= 8 vertices)")
    if c.n_betas < 1:
        raise BodyModelError("need at least one shape component")
    names = [n for n, _ in TEST_BODY_JOINTS]
    parents = [p for _, p in TEST_BODY_JOINTS]
    tree = KinematicTree(tuple(parents), tuple(names))
    P = _rest_joint_positions(c)
    lengths = [v for k, v in vars(c).items() if k not in {"n_around", "n_rings", "n_cap", "n_betas", "seed",
                                                             "blend_fraction"}]
    if min(lengths) <= 0:
        raise BodyModelError("all body dimensions must be positive")
    idx = {n: i for i, n in enumerate(names)}
    head_top = P["head"] + [0, 0, 0.12]

    # (driving joint, start point name/array, end point name/array, radius, blend with parent)
    segments = [
        ("pelvis", "pelvis", "spine", c.torso_radius, False),
        ("pelvis", "left_hip", "right_hip", c.pelvis_radius, False),
        ("spine", "spine", "chest", c.torso_radius, True),
        ("chest", "chest", "neck", c.torso_radius, True),
        ("chest", "left_shoulder", "right_shoulder", c.girdle_radius, False),
        ("neck", "neck", "head", c.neck_radius, True),
        ("head", "head", head_top, c.head_radius, True),
    ]
    for side in ("left", "right"):
        segments += [
            (f"{side}_hip", f"{side}_hip", f"{side}_knee", c.thigh_radius, True),
            (f"{side}_knee", f"{side}_knee", f"{side}_ankle", c.shin_radius, True),
            (f"{side}_ankle", f"{side}_ankle", f"{side}_toe", c.foot_radius, True),
            (f"{side}_shoulder", f"{side}_shoulder", f"{side}_elbow", c.upper_arm_radius, True),
            (f"{side}_elbow", f"{side}_elbow", f"{side}_wrist", c.forearm_radius, True),
        ]

    def point(x):
        return P[x] if isinstance(x, str) else np.asarray(x, dtype=float)

    rng = np.random.default_rng(c.seed)
    B = c.n_betas
    # per-component joint displacements for bone-length changes (dims >= 1)
    D = np.zeros((len(names), 3, B))
    bone_coef = rng.normal(0.0, 0.015, size=(len(names), B))
    for j in range(1, len(names)):
        p = parents[j]
        if names[j] not in P:  # face points ride on the head
            D[j] = D[p]
            continue
        bone = P[names[j]] - P[names[p]]
        bone_dir = bone / np.linalg.norm(bone)
        D[j] = D[p] + bone_dir[:, None] * bone_coef[j][None, :]
    D[:, :, 0] = 0.0
    thickness = rng.normal(0.0, 0.06, size=(len(segments), B))
    thickness[:, 0] = 0.0

    verts, faces, weights, basis = [], [], [], []
    regress: dict[int, np.ndarray] = {}
    start_of = {}
    offset = 0
    J = len(names)
    for s_i, (drv, a, b, radius, blend) in enumerate(segments):
        pa, pb = point(a), point(b)
        v, f, axial = meshlib.capsule(pa, pb, radius, c.n_around, c.n_rings, c.n_cap)
        jd = idx[drv]
        w = np.zeros((len(v), J))
        par = parents[jd]
        if blend and par >= 0:
            t = np.clip(axial / c.blend_fraction, 0.0, 1.0)
            own = 0.5 + 0.5 * t
            w[:, jd] = own
            w[:, par] = 1.0 - own
        else:
            w[:, jd] = 1.0

        # shape displacement: interpolate joint displacements of the endpoints
        s = np.clip(axial, 0.0, 1.0)[:, None, None]
        Da = D[idx[a]] if isinstance(a, str) else D[jd]
        Db = D[idx[b]] if isinstance(b, str) else D[jd]
        seg_axis = (pb - pa) / np.linalg.norm(pb - pa)
        rel = v - pa
        radial = rel - np.outer(rel @ seg_axis, seg_axis)
        disp = (1 - s) * Da[None] + s * Db[None] + radial[:, :, None] * thickness[s_i][None, None, :]
        disp[:, :, 0] = 0.1 * v  # global scale about the origin
        basis.append(disp)

        ring0 = offset + meshlib.capsule_ring(c.n_around, c.n_cap, 0)
        ring1 = offset + meshlib.capsule_ring(c.n_around, c.n_cap, c.n_rings - 1)
        if isinstance(a, str) and a == drv and jd not in start_of:
            start_of[jd] = ring0
        if isinstance(b, str):
            regress.setdefault(("end", idx[b]), ring1)
        verts.append(v)
        faces.append(f + offset)
        weights.append(w)
        offset += len(v)

    verts = np.vstack(verts)
    faces = np.vstack(faces)
    weights = np.vstack(weights)
    basis = np.concatenate(basis, axis=0)

    reg = np.zeros((J, len(verts)))
    head_j = idx["head"]
    head_centre = P["head"] + [0, 0, 0.06]
    face_dirs = {
        "nose": [0.0, -1.0, -0.15],
        "left_eye": [0.35, -1.0, 0.25],
        "right_eye": [-0.35, -1.0, 0.25],
        "left_ear": [1.0, 0.0, 0.0],
        "right_ear": [-1.0, 0.0, 0.0],
    }
    head_mask = (np.argmax(weights, axis=1) == head_j)
    for j, name in enumerate(names):
        if j in start_of:
            reg[j, start_of[j]] = 1.0 / len(start_of[j])
        elif ("end", j) in regress:
            ring = regress[("end", j)]
            reg[j, ring] = 1.0 / len(ring)
        elif name in face_dirs:
            d = np.asarray(face_dirs[name])
            target = head_centre + c.head_radius * d / np.linalg.norm(d)
            dist = np.linalg.norm(verts - target, axis=1)
            dist[~head_mask] = np.inf
            reg[j, int(np.argmin(dist))] = 1.0
        else:  # pragma: no cover - every joint above is covered
            raise BodyModelError(f"no regressor for joint {name}")

    return BodyModelData(verts, faces, basis, reg, weights, tree)


def default_marker_layout(model: BodyModelData, n_markers: int = 95, seed: int = 0,
                          min_weight: float = 0.999, min_separation: float = 0.07) -> dict[str, tuple[str, int]]:
    """Spread ``n_markers`` markers over the skinned segments.

    Markers sit on vertices dominated by a single joint (weight >= min_weight),
    like markers on bony landmarks, so same-segment distances stay rigid, and
    are kept ``min_separation`` apart where the segment allows it. Segments
    get markers in proportion to their surface vertex count, at least three
    each.
    """
    rng = np.random.default_rng(seed)
    seg = model.vertex_segment
    rigid = model.skin_weights.max(axis=1) >= min_weight
    segments = [j for j in range(model.n_joints) if np.any((seg == j) & rigid)]
    counts = np.array([np.sum((seg == j) & rigid) for j in segments], dtype=float)
    alloc = np.maximum(3, np.floor(n_markers * counts / counts.sum()).astype(int))
    while alloc.sum() > n_markers:
        alloc[np.argmax(alloc)] -= 1
    while alloc.sum() < n_markers:
        alloc[np.argmax(counts / alloc)] += 1
    layout = {}
    X = model.template_vertices
    for j, k in zip(segments, alloc):
        cand = rng.permutation(np.flatnonzero((seg == j) & rigid))
        chosen: list[int] = []
        sep = min_separation
        while len(chosen) < min(k, len(cand)):
            for vid in cand:
                if len(chosen) >= k:
                    break
                if vid in chosen:
                    continue
                if all(np.linalg.norm(X[vid] - X[c]) >= sep for c in chosen):
                    chosen.append(int(vid))
            sep *= 0.8
        for n, vid in enumerate(sorted(chosen)):
            layout[f"{model.joint_names[j]}_m{n:02d}"] = (model.joint_names[j], int(vid))
    return layout


# --------------------------------------------------------------------------- file io

def save_marker_layout(layout: MarkerLayout, path: str | Path) -> None:
    """JSON object: marker name -> [segment joint name, seed vertex or null]."""
    doc = {n: [seg, None if v is None else int(v)] for n, (seg, v) in layout.items()}
    Path(path).write_text(json.dumps(doc, indent=1))


def load_marker_layout(path: str | Path, model: BodyModelData | None = None) -> dict[str, tuple[str, int | None]]:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise BodyModelError(f"{path}: line {exc.lineno}: {exc.msg}") from None
    if not isinstance(doc, dict):
        raise BodyModelError(f"{path}: expected a JSON object of marker -> [segment, vertex]")
    layout = {}
    for name, entry in doc.items():
        if not isinstance(entry, (list, tuple)) or len(entry) != 2:
            raise BodyModelError(f"{path}: marker {name!r} needs [segment, vertex]")
        layout[str(name)] = (str(entry[0]), None if entry[1] is None else int(entry[1]))
    if model is not None:
        validate_layout(layout, model)
    return layout


def save_body_model(model: BodyModelData, path: str | Path) -> None:
    """Write the model as an ``.npz`` container (row-major float64 arrays).

    Keys: format, template_vertices (V,3), faces (F,3) int64, shape_basis
    (V,3,B), joint_regressor (J,V), skin_weights (V,J), parents (J,) int64,
    joint_names (J,) str.
    """
    np.savez(path, format=np.array(FORMAT_TAG),
             template_vertices=model.template_vertices, faces=model.faces,
             shape_basis=model.shape_basis, joint_regressor=model.joint_regressor,
             skin_weights=model.skin_weights,
             parents=np.asarray(model.tree.parents, dtype=np.int64),
             joint_names=np.asarray(model.tree.joint_names))


def load_body_model(path: str | Path) -> BodyModelData:
    """Load a model written by :func:`save_body_model` or an SMPL-layout ``.npz``.

    SMPL-layout files carry ``v_template``, ``f``, ``shapedirs``,
    ``J_regressor``, ``weights`` and ``kintree_table``; pose blendshapes in
    them are ignored. All invariants are validated on read.
    """
    with np.load(path, allow_pickle=False) as z:
        keys = set(z.files)
        if "format" in keys:
            if str(z["format"]) != FORMAT_TAG:
                raise BodyModelError(f"unsupported body model format {z['format']!s}")
            tree = KinematicTree(tuple(z["parents"].tolist()), tuple(z["joint_names"].tolist()))
            return BodyModelData(z["template_vertices"], z["faces"], z["shape_basis"],
                                 z["joint_regressor"], z["skin_weights"], tree)
        if {"v_template", "f", "shapedirs", "J_regressor", "weights", "kintree_table"} <= keys:
            kt = np.asarray(z["kintree_table"]).astype(np.int64)
            parents = kt[0].copy()
            parents[0] = -1
            names = tuple(str(n) for n in z["joint_names"]) if "joint_names" in keys else \
                tuple(f"joint_{i:02d}" for i in range(len(parents)))
            reg = np.asarray(z["J_regressor"], dtype=float)
            reg = np.clip(reg, 0.0, None)
            reg = reg / reg.sum(axis=1, keepdims=True)
            return BodyModelData(z["v_template"], z["f"], z["shapedirs"], reg, z["weights"],
                                 KinematicTree(tuple(parents.tolist()), names))
    raise BodyModelError(f"{path}: not a recognised body model container")
