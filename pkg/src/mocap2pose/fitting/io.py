"""Motion files: per-frame axis-angle poses, translations and one shape vector.

The container is an ``.npz`` archive with

- ``format``: the string ``mocap2pose-motion-v1``
- ``poses``: (T, 3J) float64, root orientation first, then joints in model order
- ``trans``: (T, 3) float64, meters
- ``betas``: (B,) float64
- ``mocap_framerate``: float64 scalar, Hz
- ``joint_names``: (J,) unicode

The key names follow the AMASS convention so other tools can read them.
"""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import numpy as np

from .pipeline import MotionSolution

MOTION_FORMAT = "mocap2pose-motion-v1"


def export_motion(solution: MotionSolution, path: str | Path, joint_names: Sequence[str] | None = None) -> Path:
    if solution.n_frames == 0:
        raise ValueError("cannot export an empty motion")
    path = Path(path)
    rv = solution.rotvecs()
    names = list(joint_names) if joint_names is not None else [f"joint{j}" for j in range(rv.shape[1])]
    if len(names) != rv.shape[1]:
        raise ValueError(f"{len(names)} joint names for {rv.shape[1]} joints")
    with open(path, "wb") as fh:
        np.savez(fh, format=np.array(MOTION_FORMAT), poses=rv.reshape(solution.n_frames, -1).astype(np.float64),
                 trans=solution.translation.astype(np.float64), betas=solution.betas.astype(np.float64),
                 mocap_framerate=np.float64(solution.frame_rate), joint_names=np.array(names))
    return path


def load_motion(path: str | Path) -> MotionSolution:
    with np.load(Path(path), allow_pickle=False) as data:
        if "format" not in data or str(data["format"]) != MOTION_FORMAT:
            raise ValueError(f"{path}: not a {MOTION_FORMAT} file")
        poses = data["poses"]
        T = poses.shape[0]
        if T == 0:
            raise ValueError(f"{path}: motion has no frames")
        rv = poses.reshape(T, -1, 3)
        return MotionSolution(data["trans"].copy(), rv[:, 0].copy(), rv[:, 1:].copy(), data["betas"].copy(),
                              float(data["mocap_framerate"]))
