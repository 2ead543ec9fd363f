"""Pinhole cameras with 5-coefficient radial-tangential distortion, and calibration files."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from ..rotations import rodrigues

logger = logging.getLogger(__name__)

CALIBRATION_FORMAT = "mocap2pose-calibration-v1"


class CalibrationError(ValueError):
    pass


@dataclass
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    k1: float = 0.0
    k2: float = 0.0
    p1: float = 0.0
    p2: float = 0.0
    k3: float = 0.0

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise CalibrationError("focal lengths must be positive")
        if self.width <= 0 or self.height <= 0:
            raise CalibrationError("image size must be positive")

    @property
    def K(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    @property
    def distortion(self) -> np.ndarray:
        """OpenCV ordering (k1, k2, p1, p2, k3)."""
        return np.array([self.k1, self.k2, self.p1, self.p2, self.k3])

    @property
    def has_distortion(self) -> bool:
        return bool(np.any(self.distortion != 0))


@dataclass
class CameraExtrinsics:
    rotation: np.ndarray  # world -> camera
    translation: np.ndarray  # meters, x_cam = R x_world + t

    def __post_init__(self):
        self.rotation = np.asarray(self.rotation, dtype=float).reshape(3, 3)
        self.translation = np.asarray(self.translation, dtype=float).reshape(3)
        if np.abs(self.rotation.T @ self.rotation - np.eye(3)).max() > 1e-9 or np.linalg.det(self.rotation) < 0:
            raise CalibrationError("rotation must be orthonormal with det +1")

    @property
    def centre(self) -> np.ndarray:
        return -self.rotation.T @ self.translation

    @classmethod
    def look_at(cls, position, target, up=(0.0, 0.0, 1.0)) -> "CameraExtrinsics":
        """Camera at ``position`` looking at ``target``; image y points down."""
        position = np.asarray(position, dtype=float)
        z = np.asarray(target, dtype=float) - position
        z /= np.linalg.norm(z)
        x = np.cross(z, np.asarray(up, dtype=float))
        if np.linalg.norm(x) < 1e-9:
            raise CalibrationError("viewing direction is parallel to the up vector")
        x /= np.linalg.norm(x)
        y = np.cross(z, x)
        R = np.stack([x, y, z])
        return cls(R, -R @ position)


@dataclass
class Camera:
    id: str
    intrinsics: CameraIntrinsics
    extrinsics: CameraExtrinsics

    @property
    def projection_matrix(self) -> np.ndarray:
        """3x4 matrix ``K [R | t]`` (ignores distortion)."""
        return self.intrinsics.K @ np.hstack([self.extrinsics.rotation, self.extrinsics.translation[:, None]])


@dataclass
class CameraRig:
    cameras: list[Camera] = field(default_factory=list)

    def __post_init__(self):
        ids = [c.id for c in self.cameras]
        if len(set(ids)) != len(ids):
            raise CalibrationError(f"duplicate camera ids in {ids}")

    def __len__(self) -> int:
        return len(self.cameras)

    def __iter__(self):
        return iter(self.cameras)

    @property
    def ids(self) -> list[str]:
        return [c.id for c in self.cameras]

    def __getitem__(self, cam_id: str) -> Camera:
        for c in self.cameras:
            if c.id == cam_id:
                return c
        raise KeyError(cam_id)


# --------------------------------------------------------------------------- projection

def distort(xn: np.ndarray, intr: CameraIntrinsics) -> np.ndarray:
    """Apply the distortion model to normalized coordinates (..., 2)."""
    x, y = xn[..., 0], xn[..., 1]
    r2 = x * x + y * y
    radial = 1 + intr.k1 * r2 + intr.k2 * r2 ** 2 + intr.k3 * r2 ** 3
    xd = x * radial + 2 * intr.p1 * x * y + intr.p2 * (r2 + 2 * x * x)
    yd = y * radial + intr.p1 * (r2 + 2 * y * y) + 2 * intr.p2 * x * y
    return np.stack([xd, yd], axis=-1)


def project(points: np.ndarray, camera: Camera) -> tuple[np.ndarray, np.ndarray]:
    """Pixels (..., 2) and in-front flags (...) for world points (..., 3)."""
    pts = np.asarray(points, dtype=float)
    E, K = camera.extrinsics, camera.intrinsics
    pc = pts @ E.rotation.T + E.translation
    z = pc[..., 2]
    in_front = z > 0
    safe = np.where(np.abs(z) < 1e-300, 1e-300, z)
    xn = pc[..., :2] / safe[..., None]
    xd = distort(xn, K)
    uv = np.stack([K.fx * xd[..., 0] + K.cx, K.fy * xd[..., 1] + K.cy], axis=-1)
    return uv, in_front


def undistort(pixels: np.ndarray, intr: CameraIntrinsics, iterations: int = 20,
              polish: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """Normalized coordinates (..., 2) for pixels, and a per-point convergence flag.

    The distortion is inverted by fixed-point iteration; when ``polish`` is
    set a few Newton steps on the forward model follow, which tightens the
    round trip where the fixed-point map contracts slowly.
    """
    uv = np.asarray(pixels, dtype=float)
    target = np.stack([(uv[..., 0] - intr.cx) / intr.fx, (uv[..., 1] - intr.cy) / intr.fy], axis=-1)
    if not intr.has_distortion:
        return target, np.ones(target.shape[:-1], dtype=bool)
    x = target.copy()
    for _ in range(iterations):
        xx, yy = x[..., 0], x[..., 1]
        r2 = xx * xx + yy * yy
        radial = 1 + intr.k1 * r2 + intr.k2 * r2 ** 2 + intr.k3 * r2 ** 3
        dx = 2 * intr.p1 * xx * yy + intr.p2 * (r2 + 2 * xx * xx)
        dy = intr.p1 * (r2 + 2 * yy * yy) + 2 * intr.p2 * xx * yy
        x = np.stack([(target[..., 0] - dx) / radial, (target[..., 1] - dy) / radial], axis=-1)
    if polish:
        for _ in range(5):
            J = _distort_jacobian(x, intr)
            r = distort(x, intr) - target
            x = x - np.linalg.solve(J, r[..., None])[..., 0]
    err = np.linalg.norm(distort(x, intr) - target, axis=-1) * max(intr.fx, intr.fy)
    ok = np.isfinite(err) & (err < 1e-6)
    if not np.all(ok):
        logger.warning("undistortion did not converge for %d point(s)", int(np.size(ok) - np.count_nonzero(ok)))
    return x, ok


def _distort_jacobian(xn: np.ndarray, intr: CameraIntrinsics) -> np.ndarray:
    x, y = xn[..., 0], xn[..., 1]
    r2 = x * x + y * y
    radial = 1 + intr.k1 * r2 + intr.k2 * r2 ** 2 + intr.k3 * r2 ** 3
    drad = intr.k1 + 2 * intr.k2 * r2 + 3 * intr.k3 * r2 ** 2  # d radial / d r2
    J = np.empty(xn.shape[:-1] + (2, 2))
    J[..., 0, 0] = radial + 2 * x * x * drad + 2 * intr.p1 * y + 6 * intr.p2 * x
    J[..., 0, 1] = 2 * x * y * drad + 2 * intr.p1 * x + 2 * intr.p2 * y
    J[..., 1, 0] = 2 * x * y * drad + 2 * intr.p1 * x + 2 * intr.p2 * y
    J[..., 1, 1] = radial + 2 * y * y * drad + 6 * intr.p1 * y + 2 * intr.p2 * x
    return J


# --------------------------------------------------------------------------- files

def _camera_to_dict(c: Camera) -> dict:
    k = c.intrinsics
    return {"id": c.id, "width": k.width, "height": k.height, "fx": k.fx, "fy": k.fy, "cx": k.cx, "cy": k.cy,
            "k1": k.k1, "k2": k.k2, "p1": k.p1, "p2": k.p2, "k3": k.k3,
            "rotation": c.extrinsics.rotation.ravel().tolist(), "translation": c.extrinsics.translation.tolist()}


def _camera_from_dict(d: dict) -> Camera:
    try:
        intr = CameraIntrinsics(float(d["fx"]), float(d["fy"]), float(d["cx"]), float(d["cy"]),
                                int(d["width"]), int(d["height"]),
                                *(float(d.get(k, 0.0)) for k in ("k1", "k2", "p1", "p2", "k3")))
        rot = np.asarray(d["rotation"], dtype=float)
        if rot.size != 9:
            raise CalibrationError(f"camera {d.get('id')}: rotation needs 9 values")
        ext = CameraExtrinsics(rot.reshape(3, 3), d["translation"])
        return Camera(str(d["id"]), intr, ext)
    except KeyError as exc:
        raise CalibrationError(f"camera entry missing field {exc}") from None


def save_calibration(rig: CameraRig, path: str | Path) -> None:
    """JSON: ``{"format": ..., "cameras": [{id, width, height, fx, fy, cx, cy, k1, k2, p1, p2, k3,
    rotation (9, row-major, world->camera), translation (3, m)}]}``."""
    doc = {"format": CALIBRATION_FORMAT, "cameras": [_camera_to_dict(c) for c in rig]}
    Path(path).write_text(json.dumps(doc, indent=2))


def load_calibration(path: str | Path) -> CameraRig:
    path = Path(path)
    if path.suffix.lower() == ".toml":
        return load_checkerboard_toml(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise CalibrationError(f"{path}: {exc}") from None
    if doc.get("format") != CALIBRATION_FORMAT:
        raise CalibrationError(f"{path}: expected format {CALIBRATION_FORMAT!r}")
    return CameraRig([_camera_from_dict(d) for d in doc["cameras"]])


def load_checkerboard_toml(path: str | Path) -> CameraRig:
    """Import the per-camera TOML layout written by common checkerboard tools.

    Each ``[cam_xx]`` table carries ``name``, ``size`` [w, h], ``matrix`` (3x3),
    ``distortions`` [k1, k2, p1, p2] and ``rotation`` / ``translation`` as an
    axis-angle vector and meters.
    """
    try:
        import tomllib
    except ModuleNotFoundError:  # Python < 3.11
        import tomli as tomllib
    with open(path, "rb") as fh:
        doc = tomllib.load(fh)
    cams = []
    for key, d in doc.items():
        if not isinstance(d, dict) or "matrix" not in d:
            continue
        K = np.asarray(d["matrix"], dtype=float)
        dist = list(d.get("distortions", [])) + [0.0] * 5
        w, h = d["size"]
        intr = CameraIntrinsics(K[0, 0], K[1, 1], K[0, 2], K[1, 2], int(w), int(h),
                                dist[0], dist[1], dist[2], dist[3], dist[4])
        ext = CameraExtrinsics(rodrigues(np.asarray(d["rotation"], dtype=float)), d["translation"])
        cams.append(Camera(str(d.get("name", key)), intr, ext))
    if not cams:
        raise CalibrationError(f"{path}: no camera tables found")
    return CameraRig(cams)


def rig_subset(rig: CameraRig, ids: Iterable[str]) -> CameraRig:
    keep = set(ids)
    return CameraRig([c for c in rig if c.id in keep])


def camera_centres(rig: CameraRig) -> np.ndarray:
    return np.array([c.extrinsics.centre for c in rig])
