"""Axis-angle helpers shared by the kinematics, fitting and camera code.

Everything is batched over leading dimensions. Conversions that do not need
derivatives (matrix -> rotvec, slerp) go through scipy.
"""

from __future__ import annotations

import numpy as np
from scipy.spatial.transform import Rotation, Slerp

_EPS_SMALL = 1e-6


def skew(v: np.ndarray) -> np.ndarray:
    """Cross-product matrices for vectors of shape (..., 3)."""
    v = np.asarray(v, dtype=float)
    out = np.zeros(v.shape[:-1] + (3, 3))
    out[..., 0, 1] = -v[..., 2]
    out[..., 0, 2] = v[..., 1]
    out[..., 1, 0] = v[..., 2]
    out[..., 1, 2] = -v[..., 0]
    out[..., 2, 0] = -v[..., 1]
    out[..., 2, 1] = v[..., 0]
    return out


def rodrigues(rotvec: np.ndarray) -> np.ndarray:
    """Rotation matrices (..., 3, 3) from axis-angle vectors (..., 3)."""
    r = np.asarray(rotvec, dtype=float)
    theta2 = np.sum(r * r, axis=-1)
    theta = np.sqrt(theta2)
    small = theta < _EPS_SMALL
    safe = np.where(small, 1.0, theta)
    a = np.where(small, 1.0 - theta2 / 6.0, np.sin(safe) / safe)
    b = np.where(small, 0.5 - theta2 / 24.0, (1.0 - np.cos(safe)) / (safe * safe))
    K = skew(r)
    eye = np.broadcast_to(np.eye(3), K.shape)
    return eye + a[..., None, None] * K + b[..., None, None] * (K @ K)


def rodrigues_jacobian(rotvec: np.ndarray) -> np.ndarray:
    """Derivatives of :func:`rodrigues`.

    Returns an array of shape (..., 3, 3, 3) where ``out[..., i, :, :]`` is
    dR/dr_i. Uses the closed form of Gallego & Yezzi away from the origin
    and the second-order series near it.
    """
    r = np.asarray(rotvec, dtype=float)
    lead = r.shape[:-1]
    R = rodrigues(r)
    theta2 = np.sum(r * r, axis=-1)
    small = np.sqrt(theta2) < _EPS_SMALL
    eye = np.eye(3)
    E = skew(eye)  # E[i] = [e_i]x
    out = np.empty(lead + (3, 3, 3))

    K = skew(r)
    safe2 = np.where(small, 1.0, theta2)
    I_minus_R = eye - R
    for i in range(3):
        # v x ((I - R) e_i)
        col = I_minus_R[..., :, i]
        cr = np.cross(r, col)
        big = (r[..., i, None, None] * K + skew(cr)) / safe2[..., None, None]
        big = big @ R
        series = E[i] + 0.5 * (E[i] @ K + K @ E[i])
        out[..., i, :, :] = np.where(small[..., None, None], series, big)
    return out


def matrix_to_rotvec(R: np.ndarray) -> np.ndarray:
    R = np.asarray(R, dtype=float)
    flat = R.reshape(-1, 3, 3)
    rv = Rotation.from_matrix(flat).as_rotvec()
    return rv.reshape(R.shape[:-2] + (3,))


def unwrap_rotvecs(rotvecs: np.ndarray) -> np.ndarray:
    """Make a (T, 3) axis-angle track continuous in time.

    Each frame is replaced by the equivalent rotation vector (same rotation,
    magnitude shifted by a multiple of 2*pi along either axis sign) closest
    to the previous frame, so finite differences stay meaningful through
    somersaults.
    """
    rv = np.array(rotvecs, dtype=float, copy=True)
    for t in range(1, len(rv)):
        theta = np.linalg.norm(rv[t])
        if theta < 1e-12:
            axis = rv[t - 1] / max(np.linalg.norm(rv[t - 1]), 1e-12)
            theta = 0.0
        else:
            axis = rv[t] / theta
        prev = rv[t - 1]
        best, best_d = rv[t], np.inf
        base = int(round(np.dot(prev, axis) / (2 * np.pi)))
        for k in range(base - 2, base + 3):
            cand = axis * (theta + 2 * np.pi * k)
            d = np.linalg.norm(cand - prev)
            if d < best_d:
                best, best_d = cand, d
        rv[t] = best
    return rv


def interpolate_rotvecs(key_times: np.ndarray, key_rotvecs: np.ndarray,
                        times: np.ndarray) -> np.ndarray:
    """Shortest-arc interpolation of orientations, clamped at the ends."""
    key_times = np.asarray(key_times, dtype=float)
    times = np.clip(np.asarray(times, dtype=float), key_times[0], key_times[-1])
    if len(key_times) == 1:
        return np.repeat(np.asarray(key_rotvecs, dtype=float)[:1], len(times), axis=0)
    slerp = Slerp(key_times, Rotation.from_rotvec(key_rotvecs))
    return slerp(times).as_rotvec()
