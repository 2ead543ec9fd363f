from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from ..multiview.cameras import Camera, CameraExtrinsics, CameraIntrinsics, CameraRig
from .visibility import project_joints


@dataclass
class RigSpec:
    n_cameras: int = 8
    radius: float = 10.0  # m
    heights: tuple[float, ...] = (1.0, 5.5)  # cycled around the circle
    target: tuple[float, float, float] = (0.0, 0.0, 4.0)
    intrinsics: CameraIntrinsics | None = None
    jitter: float = 0.0  # m, uniform perturbation of camera positions
    seed: int = 0


def default_intrinsics() -> CameraIntrinsics:
    return CameraIntrinsics(fx=900.0, fy=900.0, cx=960.0, cy=540.0, width=1920, height=1080)


def make_camera_rig(n_cameras: int = 8, radius: float = 10.0, heights: Sequence[float] = (1.0, 5.5),
                    target=(0.0, 0.0, 4.0), intrinsics: CameraIntrinsics | None = None, jitter: float = 0.0,
                    seed: int = 0) -> CameraRig:
    """Cameras evenly spaced on a circle, all looking at ``target``.

    ``heights`` is cycled over the cameras. ``jitter`` moves each camera by a
    seeded uniform offset before it is re-aimed at the target.
    """
    if n_cameras < 2:
        raise ValueError("a rig needs at least two cameras")
    if radius <= 0:
        raise ValueError("radius must be positive")
    if not heights:
        raise ValueError("heights must not be empty")
    rng = np.random.default_rng(seed)
    intr = intrinsics or default_intrinsics()
    cams = []
    for i in range(n_cameras):
        a = 2 * np.pi * i / n_cameras
        pos = np.array([radius * np.cos(a), radius * np.sin(a), heights[i % len(heights)]])
        if jitter > 0:
            pos = pos + rng.uniform(-jitter, jitter, 3)
        cams.append(Camera(f"cam{i + 1:02d}", replace(intr), CameraExtrinsics.look_at(pos, target)))
    return CameraRig(cams)


def rig_from_spec(spec: RigSpec) -> CameraRig:
    return make_camera_rig(spec.n_cameras, spec.radius, spec.heights, spec.target, spec.intrinsics, spec.jitter,
                           spec.seed)


def volume_coverage(rig: CameraRig, lower=(-2.0, -2.0, 0.0), upper=(2.0, 2.0, 8.0), n: int = 9) -> np.ndarray:
    """Number of cameras seeing each point of an n^3 grid spanning the box."""
    axes = [np.linspace(lo, hi, n) for lo, hi in zip(lower, upper)]
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)
    counts = np.zeros(len(grid), dtype=int)
    for cam in rig:
        _, ok = project_joints(grid, cam)
        counts += ok
    return counts
