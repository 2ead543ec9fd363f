import math
from itertools import combinations
from math import comb

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mocap2pose import synthetic as sy
from mocap2pose.acceptance import ap_ar_oracle, coco_reference, oks_oracle, ten_image_fixture
from mocap2pose.eval import (ApAr, OksConfig, UndefinedMetricError, ap_ar, build_report, combination_sweep,
                             combinations_below_threshold, emit_report, load_report, mpjpe, oks,
                             valid_joint_fraction, valid_joint_fraction_rerun)
from mocap2pose.multiview import TriangulationConfig, project, triangulate_pose
from mocap2pose.synth import (AnnotationSet, JointAnnotation2D, PredictionNoise, SceneSpec, generate_annotations,
                              make_camera_rig, make_predictions, padded_bbox)

RIG = make_camera_rig(8)


@pytest.fixture(scope="module")
def gt_set(model):
    motion = sy.acrobatic_motion(model, sy.AcrobaticMotionConfig(n_frames=60, seed=9))
    return generate_annotations(SceneSpec.from_motion(make_camera_rig(4), model, motion, stride=6))


def labelled_set(n=6, seed=0):
    rng = np.random.default_rng(seed)
    images, anns = [], []
    for i in range(n):
        images.append({"id": i + 1, "file_name": f"{i}.png", "width": 640, "height": 480, "camera_id": "c",
                       "frame": i})
        kp = np.column_stack([rng.uniform(100, 500, 17), rng.uniform(100, 400, 17), np.full(17, 2.0)])
        anns.append(JointAnnotation2D(kp, padded_bbox(kp), "c", i, i + 1))
    return AnnotationSet(images, anns)


def shifted(gt, offsets, scores=None):
    anns = []
    for i, a in enumerate(gt.annotations):
        kp = a.keypoints.copy()
        kp[:, :2] += offsets[i]
        kp[:, 2] = 1.0
        anns.append(JointAnnotation2D(kp, a.bbox.copy(), a.camera_id, a.frame, a.image_id,
                                      1.0 if scores is None else scores[i]))
    return AnnotationSet([dict(im) for im in gt.images], anns)


def views(points, sigma, rng, rig=RIG):
    out = {}
    for cam in rig:
        uv = project(points, cam)[0] + rng.normal(0, sigma, (len(points), 2)) if sigma else project(points, cam)[0]
        out[cam.id] = np.column_stack([uv, np.ones(len(points))])
    return out


def scene(n_frames=2, k=6, sigma=0.0, seed=0, outlier_rate=0.0):
    rng = np.random.default_rng(seed)
    pts = rng.uniform([-1, -1, 2.5], [1, 1, 5.5], (n_frames, k, 3))
    preds = []
    for f in range(n_frames):
        v = views(pts[f], sigma, rng)
        for cid in v:
            bad = rng.random(k) < outlier_rate
            v[cid][bad, :2] += rng.uniform(60, 150, (bad.sum(), 2))
        preds.append(v)
    return preds, pts


# --------------------------------------------------------------------------- OKS

def test_oks_identity_and_limit():
    g = labelled_set(1).annotations[0]
    assert oks(g.keypoints, g.keypoints, g.area) == 1.0
    far = g.keypoints.copy()
    far[:, :2] += 1e3 * math.sqrt(g.area)
    assert oks(g.keypoints, far, g.area) < 1e-6


def test_oks_hand_computed():
    gt = np.array([[0.0, 0.0, 2], [10.0, 0.0, 1], [5.0, 5.0, 0]])
    pr = np.array([[3.0, 4.0, 1], [10.0, 2.0, 1], [100.0, 100.0, 1]])
    cfg = OksConfig(sigmas=[0.1, 0.2, 0.3])
    area = 400.0
    # d^2 = 25 and 4; k = 0.2 and 0.4; the third joint is unlabelled
    expected = (math.exp(-25 / (2 * 400 * 0.04)) + math.exp(-4 / (2 * 400 * 0.16))) / 2
    assert abs(oks(gt, pr, area, cfg) - expected) < 1e-12
    assert abs(oks(gt, pr, area, cfg) - oks_oracle(gt, pr, area, cfg.sigmas)) < 1e-12


def test_oks_needs_labels_and_matching_sizes():
    gt = np.zeros((17, 3))
    with pytest.raises(UndefinedMetricError):
        oks(gt, gt, 100.0)
    with pytest.raises(ValueError):
        oks(np.ones((17, 3)), np.ones((16, 3)), 100.0)
    with pytest.raises(ValueError):
        OksConfig(sigmas=-np.ones(17))
    with pytest.raises(ValueError):
        OksConfig(thresholds=[0.0, 0.5])


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2 ** 31), st.floats(-np.pi, np.pi), st.floats(-500, 500), st.floats(-500, 500))
def test_oks_is_rigid_invariant(seed, angle, tx, ty):
    rng = np.random.default_rng(seed)
    gt = np.column_stack([rng.uniform(0, 300, (17, 2)), rng.integers(0, 3, 17)])
    gt[0, 2] = 2
    pr = gt.copy()
    pr[:, :2] += rng.normal(0, 10, (17, 2))
    area = padded_bbox(gt)[2] * padded_bbox(gt)[3]
    R = np.array([[np.cos(angle), -np.sin(angle)], [np.sin(angle), np.cos(angle)]])
    moved = lambda k: np.column_stack([k[:, :2] @ R.T + [tx, ty], k[:, 2]])
    # translation keeps the box area; under rotation the scale is held fixed
    shifted_only = lambda k: np.column_stack([k[:, :2] + [tx, ty], k[:, 2]])
    gs = shifted_only(gt)
    assert np.isclose(oks(gs, shifted_only(pr), padded_bbox(gs)[2] * padded_bbox(gs)[3]), oks(gt, pr, area),
                      rtol=1e-9, atol=1e-12)
    assert np.isclose(oks(moved(gt), moved(pr), area), oks(gt, pr, area), rtol=1e-9, atol=1e-12)


# --------------------------------------------------------------------------- AP / AR

def test_perfect_predictions():
    gt = labelled_set()
    assert ap_ar(shifted(gt, np.zeros(6)), gt) == ApAr(1.0, 1.0, 1.0, 1.0)


def test_constructed_oks_level():
    gt = labelled_set()
    cfg = OksConfig(sigmas=np.full(17, 0.05))
    target = 0.62
    offs = []
    for a in gt.annotations:
        d = math.sqrt(-math.log(target) * 2 * a.area * (2 * 0.05) ** 2)
        offs.append([d, 0.0])
        assert abs(oks(a.keypoints, a.keypoints + [d, 0, 0], a.area, cfg) - target) < 1e-12
    res = ap_ar(shifted(gt, np.array(offs)[:, None, :]), gt, cfg)
    assert res.ap50 == 1.0 and res.ar50 == 1.0
    assert res.ap == pytest.approx(0.3, abs=1e-12) and res.ar == pytest.approx(0.3, abs=1e-12)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_agrees_with_reference_implementations(gt_set, seed):
    pred, sub = ten_image_fixture(gt_set, seed)
    mine = np.array(ap_ar(pred, sub))
    assert np.abs(mine - np.array(ap_ar_oracle(pred, sub, OksConfig()))).max() <= 1e-6
    assert np.abs(mine - np.array(coco_reference(pred, sub))).max() <= 1e-6


def test_unlabelled_images_and_extra_detections_match_cocoeval(gt_set):
    pred = make_predictions(gt_set, PredictionNoise(pixel_sigma=4.0, outlier_rate=0.2), seed=5)
    mine = np.array(ap_ar(pred, gt_set))
    assert np.abs(mine - np.array(coco_reference(pred, gt_set))).max() <= 1e-6


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2 ** 31), st.floats(0.5, 40.0))
def test_ap_below_ap50(seed, sigma):
    rng = np.random.default_rng(seed)
    gt = labelled_set(8, seed % 1000)
    pred = shifted(gt, rng.normal(0, sigma, (8, 17, 2)), rng.random(8))
    r = ap_ar(pred, gt)
    assert r.ap <= r.ap50 + 1e-15 and r.ar <= r.ar50 + 1e-15
    assert all(0 <= x <= 1 for x in r)


def test_ap_ar_errors():
    with pytest.raises(UndefinedMetricError):
        ap_ar(AnnotationSet(), AnnotationSet())
    gt = labelled_set(2)
    bad = shifted(gt, np.zeros(2))
    bad.annotations[0].image_id = 77
    with pytest.raises(ValueError):
        ap_ar(bad, gt)


# --------------------------------------------------------------------------- MPJPE

def test_mpjpe_examples(rng):
    ref = rng.normal(0, 1, (4, 17, 3))
    assert mpjpe(ref, ref) == 0.0
    assert mpjpe(ref + [0.0, 0.01, 0.0], ref) == pytest.approx(10.0, abs=1e-9)
    mask = np.ones((4, 17), bool)
    mask[:, 3] = False
    bad = ref.copy()
    bad[:, 3] += 5.0
    assert mpjpe(bad, ref, mask) == 0.0
    nan = ref.copy()
    nan[:, 5] = np.nan
    assert mpjpe(nan, ref) == 0.0
    with pytest.raises(UndefinedMetricError):
        mpjpe(ref, ref, np.zeros((4, 17), bool))
    assert np.isnan(mpjpe(ref, ref, np.zeros((4, 17), bool), strict=False))
    with pytest.raises(ValueError):
        mpjpe(ref, ref[:2])


# --------------------------------------------------------------------------- sweep

@pytest.fixture(scope="module")
def noisy_sweep():
    preds, pts = scene(n_frames=2, k=5, sigma=3.0, seed=4, outlier_rate=0.15)
    return combination_sweep(preds, RIG, pts), preds, pts


def test_clean_sweep(rng):
    preds, pts = scene(n_frames=2, k=4)
    sw = combination_sweep(preds, RIG, pts)
    assert sw.counts() == {n: comb(8, n) for n in range(3, 9)}
    assert all(r.mpjpe_mm < 1e-6 and r.valid_fraction == 1.0 for r in sw.all_results())
    seen = [r.cameras for r in sw.all_results()]
    assert len(set(seen)) == len(seen)
    assert [r.cameras for r in sw.results[3]] == list(combinations(sorted(RIG.ids), 3))


def test_full_rig_combination_equals_triangulate_pose(noisy_sweep):
    sw, preds, pts = noisy_sweep
    (full,) = sw.results[8]
    for f, frame in enumerate(preds):
        for k, j in enumerate(triangulate_pose(frame, RIG)):
            assert j.valid == full.valid[f, k]
            if j.valid:
                assert np.array_equal(j.position, full.positions[f, k])


def test_valid_fraction_closed_form_matches_rerun(noisy_sweep):
    sw = noisy_sweep[0]
    thr = [0.5, 1, 2, 3, 5, 8, 15, 30, 1e9]
    a, b = valid_joint_fraction(sw, thr), valid_joint_fraction_rerun(sw, thr)
    for n in sw.n_range:
        assert np.allclose(a.curves[n], b.curves[n], atol=1e-12)
        assert np.all(np.diff(a.curves[n]) >= 0)
        assert a.curves[n][-1] == 1.0


def test_below_threshold_curves(noisy_sweep):
    sw = noisy_sweep[0]
    errs = np.concatenate(list(sw.mpjpe_by_n().values()))
    cur = combinations_below_threshold(sw, [0.0, 1.0, 5.0, 20.0, float(np.nanmax(errs))])
    for c in cur.curves.values():
        assert c[0] == 0.0 and c[-1] == 1.0 and np.all(np.diff(c) >= 0)


def test_outliers_lower_the_valid_fraction():
    preds_good, pts = scene(n_frames=2, k=5, sigma=1.0, seed=8)
    preds_bad, _ = scene(n_frames=2, k=5, sigma=1.0, seed=8, outlier_rate=0.35)
    vg = valid_joint_fraction(combination_sweep(preds_good, RIG, pts), [15.0])
    vb = valid_joint_fraction(combination_sweep(preds_bad, RIG, pts), [15.0])
    assert all(vg.curves[n][0] >= vb.curves[n][0] for n in vg.curves)
    assert np.mean(list(vg.curves.values())) > np.mean(list(vb.curves.values()))


def test_better_predictions_dominate_pointwise():
    # the poorer fixture carries the same pixel errors scaled up fourfold
    rng = np.random.default_rng(21)
    pts = rng.uniform([-1, -1, 2.5], [1, 1, 5.5], (2, 5, 3))
    clean = [views(p, 0.0, rng) for p in pts]
    noise = [{cid: rng.normal(0, 1.0, (5, 2)) for cid in RIG.ids} for _ in pts]
    make = lambda s: [{cid: np.column_stack([v[:, :2] + s * n[cid], v[:, 2]]) for cid, v in c.items()}
                      for c, n in zip(clean, noise)]
    good = combination_sweep(make(1.0), RIG, pts)
    bad = combination_sweep(make(4.0), RIG, pts)
    thr = np.linspace(0, 100, 101)
    cg, cb = combinations_below_threshold(good, thr), combinations_below_threshold(bad, thr)
    assert all(np.all(cg.curves[n] >= cb.curves[n]) for n in good.n_range)
    assert any(np.any(cg.curves[n] > cb.curves[n]) for n in good.n_range)


def test_median_error_falls_with_more_cameras():
    per_n = {n: [] for n in range(3, 9)}
    for seed in range(30):
        preds, pts = scene(n_frames=1, k=3, sigma=2.0, seed=100 + seed)
        for n, e in combination_sweep(preds, RIG, pts).mpjpe_by_n().items():
            per_n[n].extend(e)
    med = [np.median(per_n[n]) for n in range(3, 9)]
    assert all(a >= b for a, b in zip(med, med[1:]))


def test_sweep_argument_errors():
    preds, pts = scene(n_frames=1, k=2)
    with pytest.raises(ValueError):
        combination_sweep(preds, RIG, pts, n_range=[3, 9])
    with pytest.raises(ValueError):
        combination_sweep(preds, RIG, pts[:, :1])


# --------------------------------------------------------------------------- report

def test_report_round_trip_and_determinism(tmp_path, noisy_sweep):
    rep = build_report(ApAr(0.5, 0.75, 0.6, 0.8), noisy_sweep[0])
    files = emit_report(rep, tmp_path / "a")
    emit_report(rep, tmp_path / "b")
    names = sorted(p.name for p in files)
    assert "mpjpe_boxplot.svg" in names and "combinations.csv" in names
    for p in files:
        assert p.read_bytes() == (tmp_path / "b" / p.name).read_bytes()
    back = load_report(tmp_path / "a")
    assert back.metrics_2d == rep.metrics_2d
    assert back.combinations == rep.combinations
    assert back.mpjpe_stats == rep.mpjpe_stats
    for n in rep.valid_curves.curves:
        assert np.array_equal(back.valid_curves.curves[n], rep.valid_curves.curves[n])
        assert np.array_equal(back.below_curves.curves[n], rep.below_curves.curves[n])


def test_two_dimensional_report_only(tmp_path):
    files = emit_report(build_report(ApAr(1.0, 1.0, 1.0, 1.0)), tmp_path)
    assert [p.name for p in files] == ["metrics_2d.csv"]
    back = load_report(tmp_path)
    assert back.metrics_2d == ApAr(1.0, 1.0, 1.0, 1.0) and not back.has_3d
