import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy.spatial.transform import Rotation

from mocap2pose.rotations import (interpolate_rotvecs, matrix_to_rotvec, rodrigues, rodrigues_jacobian, skew,
                                  unwrap_rotvecs)

vec3 = arrays(np.float64, 3, elements=st.floats(-3.0, 3.0))


@given(vec3)
def test_rodrigues_matches_scipy(v):
    assert np.allclose(rodrigues(v), Rotation.from_rotvec(v).as_matrix(), atol=1e-12)


@given(vec3)
def test_rodrigues_is_a_rotation(v):
    R = rodrigues(v)
    assert np.allclose(R @ R.T, np.eye(3), atol=1e-12)
    assert np.isclose(np.linalg.det(R), 1.0)


@given(arrays(np.float64, 3, elements=st.floats(-3.0, 3.0)).filter(lambda v: np.linalg.norm(v) < 3.1))
def test_matrix_to_rotvec_inverts_rodrigues(v):
    assert np.allclose(matrix_to_rotvec(rodrigues(v)), v, atol=1e-8)


def test_small_angles_are_stable():
    for s in (0.0, 1e-12, 1e-8):
        v = np.array([s, -s, 2 * s])
        assert np.allclose(rodrigues(v), Rotation.from_rotvec(v).as_matrix(), atol=1e-15)


def test_skew_is_cross_product(rng):
    a, b = rng.normal(size=(2, 3))
    assert np.allclose(skew(a) @ b, np.cross(a, b))


@settings(max_examples=30)
@given(vec3)
def test_rodrigues_jacobian_matches_finite_differences(v):
    J = rodrigues_jacobian(v)
    h = 1e-6
    num = np.stack([(rodrigues(v + h * e) - rodrigues(v - h * e)) / (2 * h) for e in np.eye(3)])
    assert np.allclose(J, num, atol=1e-6)


def test_unwrap_removes_antipodal_flips():
    axis = np.array([0.0, 0.0, 1.0])
    angles = np.linspace(0, 4 * np.pi, 60)
    wrapped = Rotation.from_rotvec(angles[:, None] * axis).as_rotvec()
    out = unwrap_rotvecs(wrapped)
    assert np.all(np.linalg.norm(np.diff(out, axis=0), axis=1) < 0.5)
    assert np.allclose(Rotation.from_rotvec(out).as_matrix(), Rotation.from_rotvec(wrapped).as_matrix())


def _log_oracle(R):
    """Axis-angle from the trace and the antisymmetric part (angles below pi)."""
    theta = np.arccos(np.clip((np.trace(R) - 1) / 2, -1, 1))
    w = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    return w * (0.5 if theta < 1e-12 else theta / (2 * np.sin(theta)))


def test_interpolation_hits_keys_and_follows_the_geodesic(rng):
    keys = rng.normal(0, 0.8, (4, 3))
    t_keys = np.array([0.0, 1.0, 2.0, 3.0])
    out = interpolate_rotvecs(t_keys, keys, t_keys)
    assert np.allclose(rodrigues(out), rodrigues(keys), atol=1e-10)
    for t in (0.5, 2.25, 2.9):
        i = int(np.floor(t))
        R0, R1 = rodrigues(keys[i]), rodrigues(keys[i + 1])
        ref = R0 @ rodrigues((t - i) * _log_oracle(R0.T @ R1))
        mine = rodrigues(interpolate_rotvecs(t_keys, keys, np.array([t]))[0])
        assert np.allclose(mine, ref, atol=1e-9)
    ends = interpolate_rotvecs(t_keys, keys, np.array([-1.0, 5.0]))
    assert np.allclose(rodrigues(ends), rodrigues(keys[[0, -1]]), atol=1e-10)
