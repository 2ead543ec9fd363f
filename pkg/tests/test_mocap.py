import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mocap2pose import mocap
from mocap2pose import synthetic as sy


@pytest.fixture(scope="module")
def clean(model, layout):
    motion = sy.acrobatic_motion(model, sy.AcrobaticMotionConfig(n_frames=160, seed=5))
    return sy.clean_marker_sequence(model, motion, layout, noise=0.001, seed=2)


def small_sequence(rng, T=6, M=3):
    pos = rng.normal(0, 1, (T, M, 3))
    pos[1, 0] = np.nan
    return mocap.MarkerSequence([f"m{i}" for i in range(M)], 120.0, pos, np.abs(rng.normal(0, 1e-3, (T, M))))


def test_trc_round_trip_is_exact(tmp_path, rng):
    seq = small_sequence(rng)
    p = tmp_path / "a.trc"
    mocap.write_trc(seq, p, include_residuals=True)
    back = mocap.read_trc(p)
    assert back.marker_names == seq.marker_names and back.frame_rate == seq.frame_rate
    assert np.array_equal(back.positions, seq.positions, equal_nan=True)
    assert np.array_equal(back.residuals, seq.residuals)


def test_trc_units(tmp_path, rng):
    seq = small_sequence(rng)
    p = tmp_path / "mm.trc"
    mocap.write_trc(seq, p, units="mm")
    assert np.allclose(mocap.read_trc(p).positions, seq.positions, equal_nan=True, atol=1e-12)
    # the caller can override a missing or wrong header unit
    assert np.allclose(mocap.load_markers(p, units="m").positions, 1e3 * seq.positions, equal_nan=True)


def test_blank_cells_are_missing(tmp_path):
    text = ("PathFileType\t4\t(X/Y/Z)\tx.trc\n"
            "DataRate\tCameraRate\tNumFrames\tNumMarkers\tUnits\n"
            "100\t100\t2\t2\tmm\n"
            "Frame#\tTime\ta\t\t\tb\n"
            "\t\tX1\tY1\tZ1\tX2\tY2\tZ2\n"
            "1\t0.0\t1\t2\t3\t4\t5\t6\n"
            "2\t0.01\t1\t2\t3\t\t\t\n")
    p = tmp_path / "x.trc"
    p.write_text(text)
    seq = mocap.read_trc(p)
    assert seq.valid.tolist() == [[True, True], [True, False]]
    assert np.allclose(seq.positions[0, 1], [0.004, 0.005, 0.006])


@pytest.mark.parametrize("mutate,line", [
    (lambda L: L[:3], 3),
    (lambda L: L[:2] + ["oops\t1\t2\t3\tmm"] + L[3:], 3),
    (lambda L: L[:3] + ["Frame#\tTime\ta"] + L[4:], 4),
    (lambda L: L[:6] + [L[6] + "\t9\t9\t9\t9"] + L[7:], 7),
])
def test_parse_errors_carry_line_numbers(tmp_path, rng, mutate, line):
    p = tmp_path / "ok.trc"
    mocap.write_trc(small_sequence(rng), p)
    lines = p.read_text().splitlines()
    bad = tmp_path / "bad.trc"
    bad.write_text("\n".join(mutate(lines)) + "\n")
    with pytest.raises(mocap.MarkerFileError) as err:
        mocap.read_trc(bad)
    assert err.value.line == line
    assert f"line {line}" in str(err.value)


def test_npz_round_trip(tmp_path, rng):
    seq = small_sequence(rng)
    p = tmp_path / "s.npz"
    mocap.save_npz(seq, p)
    back = mocap.load_markers(p)
    assert back.marker_names == seq.marker_names
    assert np.array_equal(back.positions, seq.positions, equal_nan=True)


def test_missing_file():
    with pytest.raises(mocap.MarkerFileError):
        mocap.load_markers("/nonexistent/markers.trc")


def test_clean_sequence_keeps_everything(clean, layout):
    _, rep = mocap.run_filter_pipeline(clean, mocap.FilterConfig(), layout)
    assert rep.kept_fraction == 1.0 and not rep.dropped


@pytest.mark.parametrize("cls", ["invalid_label", "high_residual", "static", "detached", "rigid", "gaps"])
def test_each_fault_class_is_caught(clean, layout, cls):
    faulty, faults = sy.inject_faults(clean, sy.FaultPlan(**{cls: 3}), seed=7)
    _, rep = mocap.run_filter_pipeline(faulty, mocap.FilterConfig(), layout)
    bad = set(faults)
    assert len(bad) == 3
    assert set(rep.dropped) == bad


def test_jump_filter_can_be_disabled(clean, layout):
    faulty, faults = sy.inject_faults(clean, sy.FaultPlan(detached=3), seed=8)
    on = mocap.run_filter_pipeline(faulty, mocap.FilterConfig(), None)[1]
    off = mocap.run_filter_pipeline(faulty, mocap.FilterConfig(jump_filter_enabled=False), None)[1]
    assert set(faults) <= set(on.dropped)
    assert "jump_pattern" in on.dropped.values()
    assert "jump_pattern" not in off.dropped.values()


def test_jump_correlations_are_high_for_attached_markers(clean):
    c = mocap.jump_pattern_correlations(clean)
    assert np.all(c > 0.9)


def test_report_is_reparseable(clean, layout):
    faulty, _ = sy.inject_faults(clean, sy.field_scale_fault_plan(), seed=9)
    _, rep = mocap.run_filter_pipeline(faulty, mocap.FilterConfig(), layout)
    d = json.loads(json.dumps(rep.to_dict()))
    assert d["kept_count"] == rep.kept_count
    assert sum(v["kept"] for v in d["verdicts"]) == rep.kept_count
    assert 0.5 <= rep.kept_fraction <= 0.75


def test_everything_dropped_is_an_error(rng):
    seq = mocap.MarkerSequence(["*1", "*2"], 100.0, rng.normal(0, 1, (20, 2, 3)))
    with pytest.raises(mocap.FilterError):
        mocap.run_filter_pipeline(seq)


def test_distance_cv_of_rigid_pair_is_zero(rng):
    a = rng.normal(0, 1, (50, 3))
    d = rng.normal(0, 1, 3)
    assert mocap.distance_cv(a, a + d) < 1e-12


@settings(max_examples=8, deadline=None)
@given(st.integers(0, 2 ** 31))
def test_verdicts_do_not_depend_on_marker_order(clean, layout, seed):
    """Filters judge each marker from the whole set, so column order must not matter."""
    faulty, _ = sy.inject_faults(clean, sy.FaultPlan(static=1, detached=2, rigid=1, high_residual=1), seed=seed)
    perm = np.random.default_rng(seed).permutation(faulty.n_markers)
    shuffled = mocap.MarkerSequence([faulty.marker_names[i] for i in perm], faulty.frame_rate,
                                    faulty.positions[:, perm], faulty.residuals[:, perm],
                                    faulty.label_valid[perm])
    a = mocap.run_filter_pipeline(faulty, mocap.FilterConfig(), layout)[1].verdicts
    b = mocap.run_filter_pipeline(shuffled, mocap.FilterConfig(), layout)[1].verdicts
    assert a == b
