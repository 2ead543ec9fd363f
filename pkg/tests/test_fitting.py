import csv

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.spatial.transform import Rotation

from mocap2pose import body_model as bm
from mocap2pose import synthetic as sy
from mocap2pose.fitting import (PARAMETER_GROUPS, FitConfig, FitLoss, FitParams, FitWeights, MotionSolution,
                                RoughFitError, StageSpec, default_schedule, estimate_correspondence,
                                export_motion, fit_sequence, kabsch, load_motion, marker_error_report,
                                posed_marker_points, rough_global_fit)
from mocap2pose.fitting.pipeline import _run_stage
from mocap2pose.mocap import MarkerSequence
from mocap2pose.optim import grad_check


def names_and_vertices(layout):
    names = list(layout)
    return names, np.array([layout[n][1] for n in names])


def static_sequence(model, layout, rotvec=np.zeros(3), translation=np.zeros(3), T=3):
    names, vids = names_and_vertices(layout)
    rv = np.zeros((T, model.n_joints, 3))
    rv[:, 0] = rotvec
    pts = posed_marker_points(model, rv, np.tile(translation, (T, 1)), np.zeros(model.n_betas), vids)
    return MarkerSequence(names, 100.0, pts)


@pytest.fixture(scope="module")
def short_motion(fixture):
    return fixture.motion(offset=40, n_frames=80)


@pytest.fixture(scope="module")
def clean_fit(fixture, short_motion):
    seq = sy.clean_marker_sequence(fixture.model, short_motion, fixture.layout)
    return seq, fit_sequence(seq, fixture.model, fixture.layout, gmm=fixture.gmm)


# --------------------------------------------------------------------------- rough fit

@settings(max_examples=30)
@given(st.integers(0, 2 ** 31))
def test_kabsch_recovers_rigid_transforms(seed):
    rng = np.random.default_rng(seed)
    src = rng.normal(size=(12, 3))
    R = Rotation.random(random_state=seed).as_matrix()
    t = rng.normal(size=3)
    R_est, t_est = kabsch(src, src @ R.T + t)
    assert np.allclose(R_est, R, atol=1e-9) and np.allclose(t_est, t, atol=1e-9)
    assert np.isclose(np.linalg.det(R_est), 1.0)


def test_rough_fit_identity(model, layout):
    rough = rough_global_fit(static_sequence(model, layout), layout, model)
    assert np.allclose(rough.translation, 0.0, atol=1e-6)
    assert np.allclose(rough.orientation, 0.0, atol=1e-6)


def test_rough_fit_recovers_a_known_rigid_motion(model, layout):
    rv = np.array([0.4, -1.1, 2.0])
    t = np.array([0.5, -0.3, 2.2])
    rough = rough_global_fit(static_sequence(model, layout, rv, t), layout, model)
    assert np.allclose(rough.translation, t, atol=1e-4)
    R_err = Rotation.from_rotvec(rough.orientation[0]).inv() * Rotation.from_rotvec(rv)
    assert R_err.magnitude() < 1e-4


def test_rough_fit_default_samples_ten_frames(model, layout):
    seq = static_sequence(model, layout, T=200)
    rough = rough_global_fit(seq, layout, model, max_key_interval=None)
    assert len(rough.sample_frames) == 10
    assert rough.sample_frames[0] == 0 and rough.sample_frames[-1] == 199


def test_rough_fit_fails_without_enough_markers(model, layout):
    seq = static_sequence(model, layout)
    seq.positions[:, 3:] = np.nan
    with pytest.raises(RoughFitError):
        rough_global_fit(seq, layout, model)


# --------------------------------------------------------------------------- correspondence

def test_correspondence_round_trip_is_exact(model, layout):
    seq = static_sequence(model, layout, np.array([0.2, 0.1, -0.3]), np.array([0, 0, 1.0]))
    fit = FitParams.zeros(seq.n_frames, model)
    fit.orientation[:] = [0.2, 0.1, -0.3]
    fit.translation[:] = [0, 0, 1.0]
    corr = estimate_correspondence(seq, model, fit, downsample_stride=1, layout=layout)
    assert corr.marker_to_vertex == {n: v for n, (_, v) in layout.items()}


def test_correspondence_with_noise_lands_within_one_ring(model, layout, rng):
    names, vids = names_and_vertices(layout)
    seq = static_sequence(model, layout, T=12)
    seq.positions += rng.normal(0, 0.005, seq.positions.shape)
    corr = estimate_correspondence(seq, model, FitParams.zeros(seq.n_frames, model), downsample_stride=1,
                                   layout=layout)
    adj = model.adjacency
    near = sum(corr.marker_to_vertex[n] == v or corr.marker_to_vertex[n] in adj[v] for n, v in zip(names, vids))
    assert near / len(names) >= 0.95


def test_correspondence_tie_breaks(model, layout):
    name, (seg, a) = next(iter(layout.items()))
    b = next(v for v in sorted(model.adjacency[a]) if model.vertex_segment[v] == model.vertex_segment[a])
    rv = np.zeros((1, model.n_joints, 3))
    pa, pb = posed_marker_points(model, rv, np.zeros((1, 3)), np.zeros(model.n_betas), [a, b])[0]
    fit = FitParams.zeros(2, model)
    lay = {name: (seg, a)}
    # one vote each at zero distance: the lower index wins
    seq = MarkerSequence([name], 100.0, np.stack([pa, pb])[:, None])
    assert estimate_correspondence(seq, model, fit, 1, layout=lay).marker_to_vertex[name] == min(a, b)
    # one vote each, the higher index is closer on average
    hi, lo = (pa, pb) if a > b else (pb, pa)
    direction = (hi - lo) / np.linalg.norm(hi - lo)
    seq = MarkerSequence([name], 100.0, np.stack([hi + 1e-4 * direction, lo - 2e-4 * direction])[:, None])
    assert estimate_correspondence(seq, model, fit, 1, layout=lay).marker_to_vertex[name] == max(a, b)


def test_always_missing_marker_is_excluded(model, layout):
    seq = static_sequence(model, layout)
    seq.positions[:, 0] = np.nan
    corr = estimate_correspondence(seq, model, FitParams.zeros(seq.n_frames, model), 1, layout=layout)
    assert corr.excluded == [seq.marker_names[0]]


# --------------------------------------------------------------------------- loss

def loss_at_truth(fixture, motion, weights, T=8, t0=10):
    names, vids = names_and_vertices(fixture.layout)
    sub = sy.Motion(motion.rotvecs[t0:t0 + T], motion.translations[t0:t0 + T], motion.betas, motion.frame_rate)
    obs = sy.motion_markers(fixture.model, sub, dict(zip(names, vids)))
    params = FitParams(sub.translations.copy(), sub.rotvecs[:, 0].copy(), sub.rotvecs[:, 1:].copy(),
                       sub.betas.copy())
    return FitLoss(fixture.model, obs, vids, weights, fixture.gmm, motion.frame_rate), params, obs


def test_perfect_fit_has_zero_data_loss(fixture, short_motion):
    w = FitWeights(w_smooth=0.0, w_pose_prior=0.0, w_shape_prior=0.0)
    loss, params, _ = loss_at_truth(fixture, short_motion, w)
    names, vids = names_and_vertices(fixture.layout)
    exact = FitLoss(fixture.model, loss.marker_positions(params), vids, w, None, short_motion.frame_rate)
    value, grads = exact.evaluate(params)
    assert abs(value) < 1e-20
    assert all(np.allclose(g, 0.0, atol=1e-12) for g in grads.values())
    # markers offset along the posed rather than the rest normal differ by well under a millimetre
    assert np.nanmax(np.linalg.norm(loss.marker_positions(params) - loss.observed, axis=2)) < 1e-3


def test_constant_velocity_has_no_smoothing_cost(fixture):
    model = fixture.model
    names, vids = names_and_vertices(fixture.layout)
    T = 7
    params = FitParams.zeros(T, model)
    params.translation = np.arange(T)[:, None] * np.array([0.01, -0.02, 0.03])
    obs = np.full((T, len(vids), 3), np.nan)
    loss = FitLoss(model, obs, vids, FitWeights(w_data=0.0, w_pose_prior=0.0, w_shape_prior=0.0), None, 100.0)
    value, grads = loss.evaluate(params)
    assert abs(value) < 1e-20
    assert np.allclose(grads["translation"], 0.0, atol=1e-15)


@pytest.mark.parametrize("seed", range(4))
def test_loss_gradient_matches_finite_differences(fixture, short_motion, seed):
    rng = np.random.default_rng(seed)
    loss, p, _ = loss_at_truth(fixture, short_motion, FitWeights(), T=5, t0=5 * seed)
    p = FitParams(p.translation + rng.normal(0, 0.03, p.translation.shape),
                  p.orientation + rng.normal(0, 0.1, p.orientation.shape),
                  p.pose + rng.normal(0, 0.1, p.pose.shape), p.betas + rng.normal(0, 0.2, p.betas.shape))
    r = grad_check(loss.objective(p, PARAMETER_GROUPS), loss.pack(p, PARAMETER_GROUPS), eps=1e-6, rel_tol=1e-3)
    assert r.passed, r.max_rel_error


def test_missing_markers_never_produce_nan(fixture, short_motion, rng):
    names, vids = names_and_vertices(fixture.layout)
    loss, p, obs = loss_at_truth(fixture, short_motion, FitWeights())
    obs = obs.copy()
    obs[rng.random(obs.shape[:2]) < 0.5] = np.nan
    obs[:, 0] = np.nan
    value, grads = FitLoss(fixture.model, obs, vids, FitWeights(), fixture.gmm, 200.0).evaluate(p)
    assert np.isfinite(value) and all(np.all(np.isfinite(g)) for g in grads.values())


def test_data_term_ignores_marker_order(fixture, short_motion, rng):
    names, vids = names_and_vertices(fixture.layout)
    _, p, obs = loss_at_truth(fixture, short_motion, FitWeights())
    p = FitParams(p.translation + 0.02, p.orientation, p.pose, p.betas)
    perm = rng.permutation(len(vids))
    a = FitLoss(fixture.model, obs, vids).evaluate(p)[0]
    b = FitLoss(fixture.model, obs[:, perm], vids[perm]).evaluate(p)[0]
    assert np.isclose(a, b, rtol=1e-12)


def test_loss_dimension_mismatch(fixture):
    names, vids = names_and_vertices(fixture.layout)
    with pytest.raises(ValueError):
        FitLoss(fixture.model, np.zeros((3, len(vids) - 1, 3)), vids)
    loss = FitLoss(fixture.model, np.zeros((3, len(vids), 3)), vids)
    with pytest.raises(ValueError):
        loss.evaluate(FitParams.zeros(4, fixture.model))


def test_weights_must_be_nonnegative():
    with pytest.raises(ValueError):
        FitWeights(w_smooth=-1.0)
    with pytest.raises(ValueError):
        StageSpec("lbfgs", (), 10)
    with pytest.raises(ValueError):
        StageSpec("sgd", ("pose",), 10)


# --------------------------------------------------------------------------- stages

def test_stage_touches_only_its_free_parameters(fixture, short_motion, rng):
    loss, p, _ = loss_at_truth(fixture, short_motion, FitWeights())
    p = FitParams(p.translation + 0.05, p.orientation + 0.1, p.pose + rng.normal(0, 0.05, p.pose.shape),
                  p.betas + 0.1)
    for spec in default_schedule():
        out, before, after, *_ = _run_stage(loss, p, spec, FitConfig())
        assert after <= before
        for group, attr in (("translation", "translation"), ("orientation", "orientation"), ("pose", "pose"),
                            ("shape", "betas")):
            if group not in spec.free_parameters:
                assert np.array_equal(getattr(out, attr), getattr(p, attr))


def test_three_stage_schedule_does_at_least_as_well_as_one_stage(fixture):
    """Pose roughly right, global placement far off: the default schedule must not lose to a lone full stage."""
    names, vids = names_and_vertices(fixture.layout)
    cfg = FitConfig()
    for seed in range(4):
        rng = np.random.default_rng(seed)
        mo = fixture.motion(offset=30 + seed, n_frames=120)
        sub = sy.Motion(mo.rotvecs[40:70], mo.translations[40:70], mo.betas, mo.frame_rate)
        obs = sy.motion_markers(fixture.model, sub, dict(zip(names, vids)))
        R = Rotation.from_rotvec(rng.normal(0, 0.6, 3))
        init = FitParams(sub.translations + rng.normal(0, 0.3, 3),
                         (R * Rotation.from_rotvec(sub.rotvecs[:, 0])).as_rotvec(), sub.rotvecs[:, 1:].copy(),
                         np.zeros(fixture.model.n_betas))
        p = init.copy()
        for spec in default_schedule():
            loss = FitLoss(fixture.model, obs, vids, FitWeights().updated(spec.weight_overrides), fixture.gmm,
                           mo.frame_rate)
            p, _, staged, *_ = _run_stage(loss, p, spec, cfg)
        full = default_schedule()[-1]
        loss = FitLoss(fixture.model, obs, vids, FitWeights(), fixture.gmm, mo.frame_rate)
        _, _, single, *_ = _run_stage(loss, init, full, cfg)
        assert staged <= single + 1e-3 * abs(single), (seed, staged, single)


def test_clean_round_trip(fixture, short_motion, clean_fit):
    seq, sol = clean_fit
    _, joints = bm.pose_sequence(short_motion.rotvecs, short_motion.translations, short_motion.betas,
                                 fixture.model)
    err = np.linalg.norm(sol.joints(fixture.model) - joints, axis=2)
    assert 1e3 * np.sqrt(np.mean(err ** 2)) < 5.0
    assert sol.n_frames == seq.n_frames and sol.betas.shape == (fixture.model.n_betas,)


def test_stage_log_has_three_nonincreasing_stages(clean_fit):
    _, sol = clean_fit
    assert [r.stage for r in sol.stage_log] == [0, 1, 2]
    assert [r.optimizer for r in sol.stage_log] == ["lbfgs", "adam", "lbfgs"]
    assert all(r.loss_after <= r.loss_before for r in sol.stage_log)
    assert not sol.flags


def test_long_sequences_are_fit_in_windows(fixture, short_motion):
    seq = sy.clean_marker_sequence(fixture.model, short_motion, fixture.layout)
    cfg = FitConfig(max_whole_sequence=40, window=32, blend=8)
    sol = fit_sequence(seq, fixture.model, fixture.layout, gmm=fixture.gmm, config=cfg)
    assert "windowed" in sol.flags
    assert {r.window for r in sol.stage_log} == {(0, 32), (24, 56), (48, 80)}
    _, joints = bm.pose_sequence(short_motion.rotvecs, short_motion.translations, short_motion.betas,
                                 fixture.model)
    err = np.linalg.norm(sol.joints(fixture.model) - joints, axis=2)
    assert 1e3 * np.sqrt(np.mean(err ** 2)) < 10.0


# --------------------------------------------------------------------------- report and export

def truth_solution(motion, names, corr):
    return MotionSolution(motion.translations, motion.rotvecs[:, 0], motion.rotvecs[:, 1:], motion.betas,
                          motion.frame_rate, names, correspondence=corr)


def test_marker_report_on_perfect_and_offset_fits(fixture, short_motion, tmp_path):
    names, vids = names_and_vertices(fixture.layout)
    corr = dict(zip(names, map(int, vids)))
    seq = sy.clean_marker_sequence(fixture.model, short_motion, fixture.layout)
    sol = truth_solution(short_motion, names, corr)
    assert marker_error_report(sol, seq, corr, fixture.model).overall_mean < 1e-9
    # virtual markers 10 mm further out than the observed ones
    far = marker_error_report(sol, seq, corr, fixture.model, offset=bm.DEFAULT_MARKER_OFFSET + 0.010)
    assert np.isclose(far.overall_mean, 0.010, atol=1e-6)
    far.to_csv(tmp_path / "m.csv")
    far.to_svg(tmp_path / "m.svg")
    rows = list(csv.DictReader(open(tmp_path / "m.csv")))
    assert len(rows) == len(names)
    assert (tmp_path / "m.svg").read_text().lstrip().startswith(("<?xml", "<svg"))


def test_marker_report_handles_a_long_sequence(fixture):
    motion = sy.acrobatic_motion(fixture.model, sy.AcrobaticMotionConfig(n_frames=2538, seed=3))
    names, vids = names_and_vertices(fixture.layout)
    corr = dict(zip(names, map(int, vids)))
    seq = sy.clean_marker_sequence(fixture.model, motion, fixture.layout)
    rep = marker_error_report(truth_solution(motion, names, corr), seq, corr, fixture.model)
    assert all(s.n_frames == 2538 for s in rep.stats.values())
    assert rep.overall_mean < 1e-9


def test_motion_export_round_trip(tmp_path, fixture, clean_fit):
    _, sol = clean_fit
    sol.frame_rate = 200.0
    p = export_motion(sol, tmp_path / "motion.npz", fixture.model.joint_names)
    back = load_motion(p)
    assert back.frame_rate == 200.0
    for attr in ("translation", "global_orient", "joint_rotations", "betas"):
        assert np.array_equal(getattr(back, attr), getattr(sol, attr))
    with np.load(p) as data:
        assert list(data["joint_names"]) == list(fixture.model.joint_names)


def test_empty_motion_cannot_be_exported(tmp_path):
    empty = MotionSolution(np.zeros((0, 3)), np.zeros((0, 3)), np.zeros((0, 23, 3)), np.zeros(10), 100.0)
    with pytest.raises(ValueError):
        export_motion(empty, tmp_path / "e.npz")
