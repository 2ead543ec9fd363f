"""Joint projection and ray-cast occlusion against a posed triangle mesh."""

from __future__ import annotations

import numpy as np

from ..multiview.cameras import Camera, project

DEFAULT_SURFACE_TOLERANCE = 0.12  # m


def project_joints(joints_world: np.ndarray, camera: Camera) -> tuple[np.ndarray, np.ndarray]:
    """Pixels (K, 2) and in-image flags (K,): in front and inside [0, W) x [0, H)."""
    uv, front = project(np.asarray(joints_world, dtype=float), camera)
    k = camera.intrinsics
    inside = (uv[..., 0] >= 0) & (uv[..., 0] < k.width) & (uv[..., 1] >= 0) & (uv[..., 1] < k.height)
    return uv, front & inside & np.all(np.isfinite(uv), axis=-1)


def ray_triangle_distances(origin: np.ndarray, directions: np.ndarray, triangles: np.ndarray,
                           eps: float = 1e-12) -> np.ndarray:
    """Moller-Trumbore distances along unit rays, (R, F); NaN where a ray misses.

    ``directions`` is (R, 3), ``triangles`` (F, 3, 3). Only hits with
    positive distance are reported.
    """
    v0, v1, v2 = triangles[:, 0], triangles[:, 1], triangles[:, 2]
    e1, e2 = v1 - v0, v2 - v0  # (F, 3)
    p = np.cross(directions[:, None, :], e2[None, :, :])  # (R, F, 3)
    det = np.einsum("rfk,fk->rf", p, e1)
    ok = np.abs(det) > eps
    inv = np.where(ok, 1.0 / np.where(ok, det, 1.0), 0.0)
    s = origin - v0  # (F, 3)
    u = np.einsum("rfk,fk->rf", p, s) * inv
    q = np.cross(s, e1)  # (F, 3)
    v = np.einsum("rk,fk->rf", directions, q) * inv
    t = np.einsum("fk,fk->f", e2, q)[None, :] * inv
    hit = ok & (u >= 0) & (v >= 0) & (u + v <= 1) & (t > eps)
    return np.where(hit, t, np.nan)


def occlusion_flags(camera_centre: np.ndarray, joints_world: np.ndarray, vertices: np.ndarray,
                    faces: np.ndarray, surface_tolerance: float = DEFAULT_SURFACE_TOLERANCE) -> np.ndarray:
    """Vectorised :func:`ray_mesh_occluded` for many joints seen from one centre."""
    c = np.asarray(camera_centre, dtype=float)
    J = np.atleast_2d(np.asarray(joints_world, dtype=float))
    d = J - c
    dist = np.linalg.norm(d, axis=1)
    dirs = d / np.maximum(dist, 1e-300)[:, None]
    t = ray_triangle_distances(c, dirs, vertices[faces])
    before = np.where(t < dist[:, None], t, np.inf)  # only surfaces between camera and joint
    first = np.min(before, axis=1, initial=np.inf)
    return first < dist - surface_tolerance


def ray_mesh_occluded(camera_centre: np.ndarray, joint_world: np.ndarray, vertices: np.ndarray,
                      faces: np.ndarray, surface_tolerance: float = DEFAULT_SURFACE_TOLERANCE) -> bool:
    """True if the first surface the camera ray meets lies more than
    ``surface_tolerance`` in front of the joint. Hits beyond the joint are
    ignored and a ray that meets nothing leaves the joint visible."""
    return bool(occlusion_flags(camera_centre, joint_world, vertices, faces, surface_tolerance)[0])
