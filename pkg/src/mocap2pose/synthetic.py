"""Procedural trampoline motions, synthetic marker capture and fault injection.

Real recordings of elite athletes are private, so the pipeline is exercised on
generated routines: bounces with parabolic flight, somersault and twist
rotations, and tuck / pike / straight body shapes.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
from scipy.spatial.transform import Rotation

from . import body_model as bm
from .mocap import MarkerSequence
from .rotations import unwrap_rotvecs

GRAVITY = 9.81

# joint name -> list of (axis, degrees) applied in order (body faces -y, left is +x)
POSITION_PRESETS: dict[str, dict[str, list[tuple[str, float]]]] = {
    "straight": {
        "left_shoulder": [("y", -75.0)], "right_shoulder": [("y", 75.0)],
    },
    "tuck": {
        "spine": [("x", -25.0)], "chest": [("x", -20.0)], "neck": [("x", -15.0)],
        "left_hip": [("x", -120.0)], "right_hip": [("x", -120.0)],
        "left_knee": [("x", 135.0)], "right_knee": [("x", 135.0)],
        "left_ankle": [("x", 20.0)], "right_ankle": [("x", 20.0)],
        "left_shoulder": [("z", -70.0), ("y", 30.0)], "right_shoulder": [("z", 70.0), ("y", -30.0)],
        "left_elbow": [("z", -80.0)], "right_elbow": [("z", 80.0)],
    },
    "pike": {
        "spine": [("x", -20.0)], "chest": [("x", -10.0)],
        "left_hip": [("x", -110.0)], "right_hip": [("x", -110.0)],
        "left_ankle": [("x", 30.0)], "right_ankle": [("x", 30.0)],
        "left_shoulder": [("z", -80.0), ("y", 40.0)], "right_shoulder": [("z", 80.0), ("y", -40.0)],
    },
}
# takeoff / landing: arms down along the body
OPEN_PRESET = {"left_shoulder": [("y", 80.0)], "right_shoulder": [("y", -80.0)]}


def preset_rotvecs(model: bm.BodyModelData, preset: Mapping[str, list[tuple[str, float]]]) -> np.ndarray:
    """(J, 3) axis-angle pose for a preset (root rotation zero)."""
    out = np.zeros((model.n_joints, 3))
    for name, ops in preset.items():
        R = Rotation.identity()
        for axis, deg in ops:
            R = R * Rotation.from_euler(axis, deg, degrees=True)
        out[model.tree.index(name)] = R.as_rotvec()
    return out


@dataclass
class AcrobaticMotionConfig:
    n_frames: int = 240
    frame_rate: float = 200.0
    apex_height: float = 4.0  # pelvis height gain above takeoff, m
    contact_time: float = 0.25  # s on the bed between flights
    bed_height: float = 1.1  # pelvis height at takeoff/landing
    somersaults: float = 1.0  # turns per flight
    twists: float = 0.5  # turns per flight
    position: str = "tuck"
    heading: float = 0.0  # rad about world z
    pose_jitter: float = 0.08  # rad, smooth per-joint variation
    betas_scale: float = 0.5
    seed: int = 0


@dataclass
class Motion:
    """Ground-truth motion in body-model parameters."""

    rotvecs: np.ndarray  # (T, J, 3), root first
    translations: np.ndarray  # (T, 3)
    betas: np.ndarray  # (B,)
    frame_rate: float
    phases: np.ndarray = field(default_factory=lambda: np.zeros(0))  # 1 in flight, 0 on the bed

    @property
    def n_frames(self) -> int:
        return self.rotvecs.shape[0]


def _smoothstep(x):
    x = np.clip(x, 0.0, 1.0)
    return x * x * (3 - 2 * x)


def acrobatic_motion(model: bm.BodyModelData, config: AcrobaticMotionConfig | None = None) -> Motion:
    """Bounce-flight-bounce routine.

    Each cycle is a bed contact (pelvis dips, body open) followed by a
    parabolic flight during which the body somersaults about its lateral axis
    and twists about its long axis while closing into the chosen position.
    The sequence starts at takeoff of the first flight.
    """
    c = config or AcrobaticMotionConfig()
    if c.position not in POSITION_PRESETS:
        raise ValueError(f"unknown position {c.position!r}")
    rng = np.random.default_rng(c.seed)
    T = c.n_frames
    t = np.arange(T) / c.frame_rate
    v0 = np.sqrt(2 * GRAVITY * c.apex_height)
    flight = 2 * v0 / GRAVITY
    cycle = flight + c.contact_time
    tc = np.mod(t, cycle)
    k = np.floor(t / cycle)
    in_flight = tc < flight

    z = np.where(in_flight, c.bed_height + v0 * tc - 0.5 * GRAVITY * tc ** 2,
                 c.bed_height - 0.35 * np.sin(np.pi * np.clip((tc - flight) / c.contact_time, 0, 1)))
    drift = rng.normal(0, 0.15, size=2)
    xy = np.outer(t / max(t[-1], 1e-9), drift)
    trans = np.column_stack([xy, z])

    # rotation progress: linear in flight, held during contact
    prog = k + np.where(in_flight, tc / flight, 1.0)
    som = 2 * np.pi * c.somersaults * prog
    tw = 2 * np.pi * c.twists * _smoothstep(np.where(in_flight, tc / flight, 1.0) * 1.25 - 0.1) + \
        2 * np.pi * c.twists * k
    R = (Rotation.from_euler("z", c.heading) * Rotation.from_euler("x", -som)
         * Rotation.from_euler("z", tw))
    root = unwrap_rotvecs(R.as_rotvec())

    shape_pose = preset_rotvecs(model, POSITION_PRESETS[c.position])
    open_pose = preset_rotvecs(model, OPEN_PRESET)
    # close the shape in the first 30 % of flight, open in the last 20 %
    u = np.where(in_flight, tc / flight, 1.0)
    close = np.where(in_flight, _smoothstep(u / 0.3) * (1 - _smoothstep((u - 0.8) / 0.2)), 0.0)
    body = (1 - close)[:, None, None] * open_pose[None] + close[:, None, None] * shape_pose[None]

    # smooth jitter: a couple of low-frequency sinusoids per joint/axis
    freq = rng.uniform(0.3, 1.5, size=(2, model.n_joints, 3))
    phase = rng.uniform(0, 2 * np.pi, size=(2, model.n_joints, 3))
    amp = c.pose_jitter * rng.uniform(0.3, 1.0, size=(2, model.n_joints, 3))
    jitter = sum(amp[i][None] * np.sin(2 * np.pi * freq[i][None] * t[:, None, None] + phase[i][None])
                 for i in range(2))
    leaves = list(model.tree.leaves)
    jitter[:, leaves] = 0.0
    body = body + jitter
    body[:, 0] = root
    betas = rng.normal(0, c.betas_scale, size=model.n_betas)
    return Motion(body, trans, betas, c.frame_rate, in_flight.astype(float))


def pose_corpus(model: bm.BodyModelData, n_sequences: int = 24, frames_per_sequence: int = 120,
                noise: float = 0.1, seed: int = 0) -> np.ndarray:
    """Poses (N, J-1, 3) sampled from generated routines plus Gaussian jitter.

    Used to fit the pose prior when no external corpus is available.
    """
    rng = np.random.default_rng(seed)
    out = []
    positions = list(POSITION_PRESETS)
    for i in range(n_sequences):
        cfg = AcrobaticMotionConfig(n_frames=frames_per_sequence, frame_rate=60.0,
                                    position=positions[i % len(positions)],
                                    somersaults=float(rng.integers(1, 3)), twists=float(rng.integers(0, 3)) / 2,
                                    pose_jitter=0.15, seed=int(rng.integers(1 << 31)))
        m = acrobatic_motion(model, cfg)
        poses = m.rotvecs[:, 1:].copy()
        poses += rng.normal(0, noise, size=poses.shape)
        poses[:, [j - 1 for j in model.tree.leaves]] = 0.0
        out.append(poses)
    return np.concatenate(out, axis=0)


# --------------------------------------------------------------------------- markers

def motion_markers(model: bm.BodyModelData, motion: Motion, correspondence: Mapping[str, int],
                   offset: float = bm.DEFAULT_MARKER_OFFSET) -> np.ndarray:
    """Ideal marker positions (T, M, 3) placed along posed vertex normals."""
    verts, _ = bm.pose_sequence(motion.rotvecs, motion.translations, motion.betas, model)
    normals = bm.vertex_normals(verts, model.faces)
    idx = np.array([int(v) for v in correspondence.values()])
    return verts[:, idx] + offset * normals[:, idx]


def clean_marker_sequence(model: bm.BodyModelData, motion: Motion, layout: Mapping[str, tuple[str, int]],
                          noise: float = 0.0, seed: int = 0,
                          offset: float = bm.DEFAULT_MARKER_OFFSET) -> MarkerSequence:
    """Markers at the layout's seed vertices with optional Gaussian noise (m)."""
    rng = np.random.default_rng(seed)
    names = list(layout)
    corr = {n: layout[n][1] for n in names}
    pos = motion_markers(model, motion, corr, offset)
    if noise > 0:
        pos = pos + rng.normal(0, noise, size=pos.shape)
    residuals = rng.uniform(0.0005, 0.002, size=pos.shape[:2])
    return MarkerSequence(names, motion.frame_rate, pos, residuals)


@dataclass
class FaultPlan:
    """Number of markers hit by each fault class."""

    invalid_label: int = 0
    high_residual: int = 0
    static: int = 0
    detached: int = 0
    rigid: int = 0
    gaps: int = 0
    residual_sigma: float = 0.05
    rigid_step: float = 0.03  # random-walk step (m/frame)
    floor_height: float = 0.0


def inject_faults(seq: MarkerSequence, plan: FaultPlan, seed: int = 0,
                  exclude: set[str] | None = None) -> tuple[MarkerSequence, dict[str, str]]:
    """Corrupt distinct, randomly chosen markers according to ``plan``.

    Returns the corrupted copy and a map marker -> injected fault class.
    """
    rng = np.random.default_rng(seed)
    pos = seq.positions.copy()
    res = seq.residuals.copy() if seq.residuals is not None else np.full(pos.shape[:2], 0.001)
    names = list(seq.marker_names)
    label_valid = seq.label_valid.copy()
    T, M, _ = pos.shape
    pool = [i for i in range(M) if not exclude or names[i] not in exclude]
    order = list(rng.permutation(pool))
    faults: dict[str, str] = {}

    def take(n):
        picked = order[:n]
        del order[:n]
        return picked

    for i in take(plan.high_residual):
        noise = rng.normal(0, plan.residual_sigma, size=(T, 3))
        pos[:, i] += noise
        res[:, i] = np.linalg.norm(noise, axis=1)
        faults[names[i]] = "high_residual"
    for i in take(plan.static):
        # a stray reflection fixed somewhere near the bed
        pos[:, i] = np.array([rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(0.0, 0.3)])
        faults[names[i]] = "static"
    for i in take(plan.detached):
        t0 = int(rng.integers(T // 8, T // 3))
        fall = max(int(0.25 * seq.frame_rate), 2)
        start = pos[t0, i].copy()
        for t in range(t0, T):
            a = min((t - t0) / fall, 1.0)
            pos[t, i] = start + a * (np.array([start[0], start[1], plan.floor_height]) - start)
        faults[names[i]] = "detached"
    for i in take(plan.rigid):
        walk = np.cumsum(rng.normal(0, plan.rigid_step, size=(T, 3)), axis=0)
        pos[:, i] += walk
        faults[names[i]] = "rigid"
    for i in take(plan.invalid_label):
        if rng.random() < 0.5:
            names[i] = f"*{i}"
        else:
            label_valid[i] = False
        faults[names[i]] = "invalid_label"
    for i in take(plan.gaps):
        missing = rng.random(T) < 0.75
        pos[missing, i] = np.nan
        faults[names[i]] = "gaps"
    return MarkerSequence(names, seq.frame_rate, pos, res, label_valid), faults


def field_scale_fault_plan() -> FaultPlan:
    """Fault mix for a 95-marker set that leaves roughly 60 % of markers usable."""
    return FaultPlan(invalid_label=6, high_residual=6, static=5, detached=11, rigid=6, gaps=2,
                     rigid_step=0.01)
