import itertools
import warnings
from dataclasses import replace

import cv2
import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st
from scipy.spatial.transform import Rotation

from mocap2pose.acceptance import exhaustive_subset_oracle, random_rig
from mocap2pose.multiview import (CalibrationError, Camera, CameraExtrinsics, CameraIntrinsics, CameraRig,
                                  DegenerateGeometryError, TriangulationConfig, calibration_roundtrip_check,
                                  distort, dlt_triangulate, load_calibration, project, rig_subset,
                                  robust_triangulate_joint, save_calibration, triangulate_pose, undistort)
from mocap2pose.synth import make_camera_rig


def cv2_project(X, cam):
    k = cam.intrinsics
    rvec, _ = cv2.Rodrigues(cam.extrinsics.rotation)
    uv, _ = cv2.projectPoints(np.atleast_2d(X).astype(np.float64), rvec, cam.extrinsics.translation, k.K,
                              k.distortion)
    return uv.reshape(-1, 2)


def observations(X, rig, conf=1.0):
    return [(c.id, project(X, c)[0], conf) for c in rig]


@pytest.fixture(scope="module")
def rig():
    return random_rig(np.random.default_rng(5))


# --------------------------------------------------------------------------- cameras

def test_intrinsics_and_extrinsics_are_validated():
    with pytest.raises(CalibrationError):
        CameraIntrinsics(0.0, 1.0, 0, 0, 10, 10)
    with pytest.raises(CalibrationError):
        CameraIntrinsics(1.0, 1.0, 0, 0, 0, 10)
    with pytest.raises(CalibrationError):
        CameraExtrinsics(np.diag([1.0, 1.0, -1.0]), np.zeros(3))
    intr = CameraIntrinsics(1.0, 1.0, 0, 0, 10, 10)
    cam = Camera("a", intr, CameraExtrinsics(np.eye(3), np.zeros(3)))
    with pytest.raises(CalibrationError):
        CameraRig([cam, cam])


def test_point_on_axis_hits_the_principal_point():
    intr = CameraIntrinsics(900, 910, 960.5, 540.25, 1920, 1080)
    cam = Camera("c", intr, CameraExtrinsics(np.eye(3), np.zeros(3)))
    uv, front = project(np.array([0.0, 0.0, 1.0]), cam)
    assert np.allclose(uv, [960.5, 540.25]) and front
    _, behind = project(np.array([0.0, 0.0, -1.0]), cam)
    assert not behind


def test_projection_matches_opencv(rig, rng):
    X = rng.uniform([-2, -2, 0.5], [2, 2, 6], (50, 3))
    for cam in rig:
        assert np.allclose(project(X, cam)[0], cv2_project(X, cam), atol=1e-9)


def test_undistort_matches_opencv_and_round_trips(rig, rng):
    for cam in rig:
        k = cam.intrinsics
        px = rng.uniform([100, 100], [1820, 980], (40, 2))
        xn, ok = undistort(px, k)
        assert ok.all()
        ref = cv2.undistortPoints(px.reshape(-1, 1, 2), k.K, k.distortion,
                                  criteria=(cv2.TERM_CRITERIA_COUNT | cv2.TERM_CRITERIA_EPS, 200, 1e-15))
        assert np.allclose(xn, ref.reshape(-1, 2), atol=1e-7)
        back = distort(xn, k) * [k.fx, k.fy] + [k.cx, k.cy]
        assert np.abs(back - px).max() < 1e-6


def test_undistort_with_barrel_distortion():
    k = CameraIntrinsics(800, 800, 640, 360, 1280, 720, k1=-0.2)
    g = np.stack(np.meshgrid(np.linspace(-1, 1, 11), np.linspace(-1, 1, 11)), -1).reshape(-1, 2)
    g = g[np.linalg.norm(g, axis=1) <= 1.0]
    px = distort(g, k) * 800 + [640, 360]
    xn, ok = undistort(px, k)
    back = distort(xn, k) * 800 + [640, 360]
    assert ok.all() and np.abs(back - px).max() < 1e-6


def test_undistort_without_distortion_is_affine():
    k = CameraIntrinsics(800, 700, 640, 360, 1280, 720)
    xn, _ = undistort(np.array([[640.0, 360.0], [1440.0, 1060.0]]), k)
    assert np.array_equal(xn, [[0.0, 0.0], [1.0, 1.0]])


def test_calibration_round_trip(tmp_path, rig):
    save_calibration(rig, tmp_path / "calib.json")
    back = load_calibration(tmp_path / "calib.json")
    assert back.ids == rig.ids
    for a, b in zip(rig, back):
        assert a.intrinsics == b.intrinsics
        assert np.array_equal(a.extrinsics.rotation, b.extrinsics.rotation)
        assert np.array_equal(a.extrinsics.translation, b.extrinsics.translation)


def test_bad_calibration_files(tmp_path):
    p = tmp_path / "c.json"
    p.write_text("{not json")
    with pytest.raises(CalibrationError):
        load_calibration(p)
    p.write_text('{"format": "something-else", "cameras": []}')
    with pytest.raises(CalibrationError):
        load_calibration(p)


def test_checkerboard_toml_import(tmp_path):
    R = Rotation.from_rotvec([0.1, -0.2, 0.3])
    text = """[cam_01]
name = "left"
size = [ 1920.0, 1080.0]
matrix = [ [ 1000.0, 0.0, 960.0], [ 0.0, 1001.0, 540.0], [ 0.0, 0.0, 1.0]]
distortions = [ -0.05, 0.01, 0.001, -0.002]
rotation = [ 0.1, -0.2, 0.3]
translation = [ 0.5, 1.0, 6.0]
fisheye = false

[metadata]
adjusted = false
"""
    p = tmp_path / "calib.toml"
    p.write_text(text)
    rig = load_calibration(p)
    cam = rig["left"]
    assert cam.intrinsics.fy == 1001.0 and cam.intrinsics.k1 == -0.05 and cam.intrinsics.p2 == -0.002
    assert np.allclose(cam.extrinsics.rotation, R.as_matrix(), atol=1e-12)
    assert np.allclose(cam.extrinsics.translation, [0.5, 1.0, 6.0])


def test_rig_subset_keeps_order(rig):
    sub = rig_subset(rig, [rig.ids[3], rig.ids[1]])
    assert sub.ids == [rig.ids[1], rig.ids[3]]


# --------------------------------------------------------------------------- triangulation

def test_dlt_is_exact_on_noiseless_views(rig, rng):
    for _ in range(20):
        X = rng.uniform([-2, -2, 0.5], [2, 2, 6])
        for n in (2, 3, 8):
            p, errs = dlt_triangulate([(c.id, project(X, c)[0]) for c in list(rig)[:n]], rig)
            assert np.abs(p - X).max() <= 1e-9
            assert max(errs.values()) < 1e-6


def test_dlt_agrees_with_opencv_two_view():
    rig = make_camera_rig(2)
    X = np.array([0.3, -0.2, 3.5])
    a, b = list(rig)
    ua, ub = project(X, a)[0], project(X, b)[0]
    P1 = a.intrinsics.K @ np.hstack([a.extrinsics.rotation, a.extrinsics.translation[:, None]])
    P2 = b.intrinsics.K @ np.hstack([b.extrinsics.rotation, b.extrinsics.translation[:, None]])
    h = cv2.triangulatePoints(P1, P2, ua.reshape(2, 1), ub.reshape(2, 1))
    ref = (h[:3] / h[3]).ravel()
    p, _ = dlt_triangulate([(a.id, ua), (b.id, ub)], rig)
    assert np.allclose(p, ref, atol=1e-8) and np.allclose(p, X, atol=1e-9)


def test_error_shrinks_with_more_cameras():
    rng = np.random.default_rng(11)
    rig = make_camera_rig(8)
    mean_err = {}
    for n in (2, 4, 8):
        errs = []
        for _ in range(300):
            X = rng.uniform([-1, -1, 2], [1, 1, 6])
            obs = [(c.id, project(X, c)[0] + rng.normal(0, 2.0, 2)) for c in list(rig)[:: 8 // n]]
            errs.append(np.linalg.norm(dlt_triangulate(obs, rig)[0] - X))
        mean_err[n] = np.mean(errs)
    assert mean_err[2] > mean_err[4] > mean_err[8]


def test_identical_cameras_are_degenerate():
    cam = make_camera_rig(2).cameras[0]
    rig = CameraRig([cam, replace(cam, id="twin")])
    px = project(np.array([0.0, 0.0, 4.0]), cam)[0]
    with pytest.raises(DegenerateGeometryError):
        dlt_triangulate([(cam.id, px), ("twin", px)], rig)
    with pytest.raises(ValueError):
        dlt_triangulate([(cam.id, px)], rig)


def test_clean_views_use_every_camera(rig):
    res = robust_triangulate_joint(observations(np.array([0.1, 0.2, 3.0]), rig), rig)
    assert res.valid and len(res.cameras_used) == 8 and res.mean_reproj_error_px < 1e-6


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2 ** 31), st.floats(20.0, 300.0))
def test_single_outlier_matches_exhaustive_search(seed, shift):
    rng = np.random.default_rng(seed)
    rig = random_rig(rng)
    X = rng.uniform([-2, -2, 0.5], [2, 2, 6])
    bad = rig.ids[int(rng.integers(8))]
    ang = rng.uniform(0, 2 * np.pi)
    obs = {c.id: project(X, c)[0] + (shift * np.array([np.cos(ang), np.sin(ang)]) if c.id == bad else 0)
           for c in rig}
    # two DLT normalizations can land on opposite sides of the threshold when the error sits on it
    _, errs = dlt_triangulate(list(obs.items()), rig)
    assume(abs(np.mean(list(errs.values())) - 15.0) > 0.5)
    res = robust_triangulate_joint([(k, v, 1.0) for k, v in obs.items()], rig)
    assert res.valid
    assert tuple(sorted(res.cameras_used)) == exhaustive_subset_oracle(obs, rig)
    if shift >= 100:
        assert sorted(res.cameras_used) == sorted(set(rig.ids) - {bad})


def test_low_confidence_views_are_dropped(rig):
    X = np.array([0.0, 0.5, 2.5])
    obs = [(c.id, project(X, c)[0], 0.9 if i < 2 else 0.1) for i, c in enumerate(rig)]
    assert not robust_triangulate_joint(obs, rig).valid
    assert robust_triangulate_joint(obs, rig, TriangulationConfig(min_cameras=2)).valid


def test_config_validation():
    with pytest.raises(ValueError):
        TriangulationConfig(min_cameras=1)
    with pytest.raises(ValueError):
        TriangulationConfig(reproj_threshold_px=0.0)
    with pytest.raises(ValueError):
        TriangulationConfig(likelihood_threshold=1.5)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2 ** 31))
def test_camera_order_does_not_matter(seed):
    rng = np.random.default_rng(seed)
    rig = random_rig(rng)
    X = rng.uniform([-2, -2, 0.5], [2, 2, 6])
    obs = [(c.id, project(X, c)[0] + rng.normal(0, 8, 2), 1.0) for c in rig]
    a = robust_triangulate_joint(obs, rig)
    b = robust_triangulate_joint([obs[i] for i in rng.permutation(8)], rig)
    assert a.valid == b.valid and set(a.cameras_used) == set(b.cameras_used)
    assert np.array_equal(a.position, b.position, equal_nan=True)


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2 ** 31))
def test_raising_the_threshold_never_loses_valid_joints(seed):
    rng = np.random.default_rng(seed)
    rig = random_rig(rng)
    X = rng.uniform([-2, -2, 0.5], [2, 2, 6], (6, 3))
    noisy = [[(c.id, project(x, c)[0] + rng.normal(0, 15, 2), 1.0) for c in rig] for x in X]
    counts = [sum(robust_triangulate_joint(o, rig, TriangulationConfig(reproj_threshold_px=t)).valid
                  for o in noisy) for t in (1, 5, 10, 15, 25, 50, 1e6)]
    assert counts == sorted(counts) and counts[-1] == len(X)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2 ** 31), st.integers(2, 4), st.floats(2.0, 40.0))
def test_results_satisfy_their_own_invariants(seed, min_cameras, threshold):
    rng = np.random.default_rng(seed)
    rig = random_rig(rng)
    X = rng.uniform([-2, -2, 0.5], [2, 2, 6])
    obs = [(c.id, project(X, c)[0] + rng.normal(0, 10, 2), float(rng.uniform(0, 1))) for c in rig]
    cfg = TriangulationConfig(min_cameras=min_cameras, reproj_threshold_px=threshold)
    r = robust_triangulate_joint(obs, rig, cfg)
    if r.valid:
        assert len(r.cameras_used) >= min_cameras and r.mean_reproj_error_px <= threshold
        assert np.isclose(np.mean(list(r.reproj_errors_px.values())), r.mean_reproj_error_px)
        assert all(conf >= cfg.likelihood_threshold for cid, _, conf in obs if cid in r.cameras_used)


def test_triangulate_pose_isolates_a_corrupted_joint(rng):
    rig = make_camera_rig(8)
    X = rng.uniform([-0.5, -0.5, 3], [0.5, 0.5, 5], (17, 3))
    kp = {}
    for i, c in enumerate(rig):
        uv = project(X, c)[0]
        if i < 6:
            uv[4] += rng.uniform(80, 200, 2) * rng.choice([-1, 1], 2)
        kp[c.id] = np.column_stack([uv, np.ones(17)])
    res = triangulate_pose(kp, rig)
    assert len(res) == 17
    assert not res[4].valid
    assert all(r.valid for k, r in enumerate(res) if k != 4)
    clean = triangulate_pose({cid: np.column_stack([project(X, rig[cid])[0], np.ones(17)]) for cid in rig.ids}, rig)
    assert all(r.valid for r in clean)


def test_calibration_check_exact_and_perturbed(rng):
    rig = make_camera_rig(8)
    pts = rng.uniform([-2, -2, 1], [2, 2, 7], (100, 3))
    exact = calibration_roundtrip_check(rig, pts)
    assert exact.rmse_px < 1e-6 and not exact.warning
    cams = [replace(c, extrinsics=CameraExtrinsics(
        Rotation.from_rotvec(rng.normal(0, np.deg2rad(0.1), 3)).as_matrix() @ c.extrinsics.rotation,
        c.extrinsics.translation)) for c in rig]
    measured = {c.id: project(pts, c)[0] for c in rig}
    off = calibration_roundtrip_check(CameraRig(cams), pts, observations=measured)
    assert 0.1 < off.rmse_px < 10.0


def test_calibration_check_warns_above_two_pixels(rng):
    rig = make_camera_rig(4)
    pts = rng.uniform([-1, -1, 2], [1, 1, 6], (30, 3))
    measured = {c.id: project(pts, c)[0] + rng.normal(0, 5, (30, 2)) for c in rig}
    with pytest.warns(RuntimeWarning):
        res = calibration_roundtrip_check(rig, pts, observations=measured)
    assert res.warning and res.rmse_px > 2.0
    with pytest.raises(ValueError):
        calibration_roundtrip_check(CameraRig(rig.cameras[:1]), pts)
