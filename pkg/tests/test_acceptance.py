"""Acceptance criteria 1 to 9, checked on two runs of the end-to-end demo.

Each test re-applies the criterion's thresholds to the numbers the demo
recorded, prints one PASS/FAIL line and fails if the criterion is not met.
"""

import json
import time

import pytest

from mocap2pose.acceptance import CRITERIA
from mocap2pose.cli import PipelineConfig, load_manifest
from mocap2pose.cli.demo import cmd_demo


def _run(out):
    cfg = PipelineConfig()
    cfg.paths.output = str(out)
    t = time.perf_counter()
    man, results = cmd_demo(cfg)
    return {"manifest": man, "results": {r.criterion: r for r in results}, "seconds": time.perf_counter() - t,
            "out": out}


@pytest.fixture(scope="module")
def demo_runs(tmp_path_factory):
    return [_run(tmp_path_factory.mktemp(f"demo{i}")) for i in (1, 2)]


@pytest.fixture(scope="module")
def first(demo_runs):
    return demo_runs[0]


def verdict(log, criterion, ok, text):
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {criterion} ({CRITERIA[criterion]}): {text}"
    log[criterion] = line
    print(line)
    assert ok, line


def details(run, criterion):
    """Details as written to checks.json (string keys)."""
    return run["results"][criterion].to_dict()["details"]


def test_criterion_1_fitting_round_trip(first, acceptance_log):
    d = details(first, 1)
    ok = (d["frames"] >= 200 and d["clean_joint_rmse_mm"] < 5.0 and d["noisy_marker_residual_mm"] < 30.0
          and d["stages"] == 3 and d["within_time_budget"])
    verdict(acceptance_log, 1, ok, f"{d['frames']} frames, clean joint RMSE {d['clean_joint_rmse_mm']:.2f} mm, "
                                   f"noisy marker residual {d['noisy_marker_residual_mm']:.1f} mm")


def test_criterion_2_filter_efficacy(first, acceptance_log):
    d = details(first, 2)
    caught = d["caught_fraction"]
    ok = (set(caught) == {"static", "detached", "high_residual", "rigid"} and all(v == 1.0 for v in caught.values())
          and d["clean_false_positives"] == 0 and 0.50 <= d["field_scale_kept_fraction"] <= 0.75)
    verdict(acceptance_log, 2, ok, f"all fault classes caught {all(v == 1.0 for v in caught.values())}, "
                                   f"clean drops {d['clean_false_positives']}, "
                                   f"field-scale kept {d['field_scale_kept_fraction']:.0%}")


def test_criterion_3_gradient_correctness(first, acceptance_log):
    d = details(first, 3)
    ok = d["fit_loss_max_rel_error"] <= 1e-3 and d["gmm_max_rel_error"] <= 1e-3 and d["em_min_loglik_step"] >= -1e-9
    verdict(acceptance_log, 3, ok, f"fit loss {d['fit_loss_max_rel_error']:.1e}, prior {d['gmm_max_rel_error']:.1e}, "
                                   f"EM min step {d['em_min_loglik_step']:.1e}")


def test_criterion_4_triangulation(first, acceptance_log):
    d = details(first, 4)
    n = d["scenes"]
    ok = (n == 100 and d["noiseless_max_error_m"] <= 1e-9 and d["selected_clean_seven"] == n
          and d["oracle_agreement"] == n and d["defaults_3_and_15px"] and d["min_cameras_enforced"]
          and d["threshold_enforced"])
    verdict(acceptance_log, 4, ok, f"noiseless {d['noiseless_max_error_m']:.1e} m, clean seven "
                                   f"{d['selected_clean_seven']}/{n}, oracle {d['oracle_agreement']}/{n}")


def test_criterion_5_sweep_structure(first, acceptance_log):
    d = details(first, 5)
    ok = (d["combination_counts"].get("3") == 56 and d["monotone"] and d["good_dominates_poor"]
          and d["full_rig_matches"] and d["infinite_threshold_all_valid"])
    at15 = d["valid_fraction_at_15px"]
    ok = ok and all(at15["good"][n] >= at15["poor"][n] for n in at15["good"])
    verdict(acceptance_log, 5, ok, f"counts {d['combination_counts']}, monotone {d['monotone']}, "
                                   f"good dominates poor {d['good_dominates_poor']}")


def test_criterion_6_metric_machinery(first, acceptance_log):
    d = details(first, 6)
    ok = (d["pycocotools_available"] and d["pycocotools_max_diff"] <= 1e-6 and d["naive_oracle_max_diff"] <= 1e-6
          and d["mpjpe_identity_zero"] and d["mpjpe_offset_exact"])
    verdict(acceptance_log, 6, ok, f"max diff vs pycocotools {d['pycocotools_max_diff']:.1e}, MPJPE exact "
                                   f"{d['mpjpe_identity_zero'] and d['mpjpe_offset_exact']}")


def test_criterion_7_visibility(first, acceptance_log):
    d = details(first, 7)
    ok = d["scenes"] == 1000 and d["agreement"] == d["rays"] and all(d["constructed_cases"].values())
    verdict(acceptance_log, 7, ok, f"{d['agreement']}/{d['rays']} rays agree over {d['scenes']} scenes, "
                                   f"constructed cases {sum(d['constructed_cases'].values())}/"
                                   f"{len(d['constructed_cases'])}")


def test_criterion_8_calibration(first, acceptance_log):
    d = details(first, 8)
    ok = d["exact_rmse_px"] < 1e-6 and d["perturbed_rmse_px"] > 2.0 and d["perturbed_warned"]
    verdict(acceptance_log, 8, ok, f"exact {d['exact_rmse_px']:.1e} px, perturbed {d['perturbed_rmse_px']:.2f} px "
                                   f"warned {d['perturbed_warned']}")


def test_criterion_9_end_to_end(demo_runs, acceptance_log):
    a, b = demo_runs
    all_passed = all(r.passed for r in a["results"].values()) and sorted(a["results"]) == list(range(1, 9))
    same = a["manifest"].content_hash() == b["manifest"].content_hash()
    ma, mb = load_manifest(a["out"] / "manifest.json"), load_manifest(b["out"] / "manifest.json")
    same_files = ma["outputs"] == mb["outputs"] and ma["content_hash"] == mb["content_hash"]
    fast = max(a["seconds"], b["seconds"]) < 600
    checks = json.loads((a["out"] / "checks.json").read_text())
    ok = all_passed and same and same_files and fast and ma["status"] == "ok" and len(checks) == 8
    verdict(acceptance_log, 9, ok, f"checks 1-8 passed {all_passed}, identical manifest hash {same and same_files}, "
                                   f"{a['seconds']:.0f} s and {b['seconds']:.0f} s")
