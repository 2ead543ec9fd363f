"""Evaluation report: summary statistics, CSV tables and SVG plots."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .. import plotting
from .metrics import ApAr
from .sweep import CombinationSweep, ThresholdCurves, combinations_below_threshold, valid_joint_fraction

DEFAULT_REPROJ_THRESHOLDS = tuple(float(x) for x in range(1, 41))  # px
DEFAULT_MPJPE_THRESHOLDS = tuple(float(x) for x in range(0, 101, 2))  # mm


@dataclass
class BoxStats:
    """Tukey box-plot summary; outliers lie beyond 1.5 IQR from the quartiles."""

    n: int
    mean: float
    q1: float
    median: float
    q3: float
    lower_whisker: float
    upper_whisker: float
    outliers: tuple[float, ...] = ()

    @classmethod
    def of(cls, values: Sequence[float]) -> "BoxStats":
        v = np.asarray(values, dtype=float)
        v = v[np.isfinite(v)]
        if v.size == 0:
            nan = float("nan")
            return cls(0, nan, nan, nan, nan, nan, nan)
        q1, med, q3 = np.percentile(v, [25, 50, 75])
        iqr = q3 - q1
        lo, hi = q1 - 1.5 * iqr, q3 + 1.5 * iqr
        inside = v[(v >= lo) & (v <= hi)]
        out = tuple(float(x) for x in np.sort(v[(v < lo) | (v > hi)]))
        return cls(int(v.size), float(v.mean()), float(q1), float(med), float(q3), float(inside.min()),
                   float(inside.max()), out)


@dataclass
class EvalReport:
    metrics_2d: ApAr | None = None
    mpjpe_stats: dict[int, BoxStats] = field(default_factory=dict)
    combinations: list[tuple[int, tuple[str, ...], float, float]] = field(default_factory=list)
    valid_curves: ThresholdCurves | None = None
    below_curves: ThresholdCurves | None = None

    @property
    def has_3d(self) -> bool:
        return bool(self.combinations)


def build_report(metrics_2d: ApAr | None = None, sweep: CombinationSweep | None = None,
                 reproj_thresholds: Sequence[float] = DEFAULT_REPROJ_THRESHOLDS,
                 mpjpe_thresholds_mm: Sequence[float] = DEFAULT_MPJPE_THRESHOLDS) -> EvalReport:
    rep = EvalReport(metrics_2d)
    if sweep is None:
        return rep
    for n, errs in sweep.mpjpe_by_n().items():
        rep.mpjpe_stats[n] = BoxStats.of(errs)
    rep.combinations = [(r.n_cameras, r.cameras, r.mpjpe_mm, r.valid_fraction) for r in sweep.all_results()]
    rep.valid_curves = valid_joint_fraction(sweep, reproj_thresholds)
    rep.below_curves = combinations_below_threshold(sweep, mpjpe_thresholds_mm)
    return rep


def _f(x: float) -> str:
    return repr(float(x))  # shortest round-trip representation


def _write_curves(path: Path, curves: ThresholdCurves, threshold_name: str) -> None:
    ns = sorted(curves.curves)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([threshold_name] + [f"n{n}" for n in ns])
        for i, t in enumerate(curves.thresholds):
            w.writerow([_f(t)] + [_f(curves.curves[n][i]) for n in ns])


def _read_curves(path: Path) -> ThresholdCurves:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    ns = [int(h[1:]) for h in rows[0][1:]]
    data = np.array([[float(x) for x in r] for r in rows[1:]]).reshape(-1, len(ns) + 1)
    return ThresholdCurves(data[:, 0], {n: data[:, i + 1] for i, n in enumerate(ns)})


def emit_report(report: EvalReport, out_dir: str | Path) -> list[Path]:
    """Write the report; identical reports give byte-identical files.

    Files:
      metrics_2d.csv          metric,value for ap, ap50, ar, ar50
      combinations.csv        n_cameras,cameras ('+'-joined ids),mpjpe_mm,valid_fraction
      mpjpe_by_n.csv          n_cameras,n_combinations,mean_mm,q1_mm,median_mm,q3_mm,
                              lower_whisker_mm,upper_whisker_mm,outliers_mm (';'-joined)
      valid_joints.csv        threshold_px then one column n<N> per camera count
      combinations_below.csv  threshold_mm then one column n<N> per camera count
    plus mpjpe_boxplot.svg, valid_joints.svg and combinations_below.svg.
    The 3D files are skipped when the report has no sweep.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    if report.metrics_2d is not None:
        p = out / "metrics_2d.csv"
        with open(p, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["metric", "value"])
            for name, val in report.metrics_2d._asdict().items():
                w.writerow([name, _f(val)])
        written.append(p)
    if not report.has_3d:
        return written
    p = out / "combinations.csv"
    with open(p, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["n_cameras", "cameras", "mpjpe_mm", "valid_fraction"])
        for n, cams, err, frac in report.combinations:
            w.writerow([n, "+".join(cams), _f(err), _f(frac)])
    written.append(p)
    p = out / "mpjpe_by_n.csv"
    with open(p, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["n_cameras", "n_combinations", "mean_mm", "q1_mm", "median_mm", "q3_mm", "lower_whisker_mm",
                    "upper_whisker_mm", "outliers_mm"])
        for n in sorted(report.mpjpe_stats):
            s = report.mpjpe_stats[n]
            w.writerow([n, s.n, _f(s.mean), _f(s.q1), _f(s.median), _f(s.q3), _f(s.lower_whisker),
                        _f(s.upper_whisker), ";".join(_f(x) for x in s.outliers)])
    written.append(p)
    if report.valid_curves is not None:
        p = out / "valid_joints.csv"
        _write_curves(p, report.valid_curves, "threshold_px")
        written.append(p)
    if report.below_curves is not None:
        p = out / "combinations_below.csv"
        _write_curves(p, report.below_curves, "threshold_mm")
        written.append(p)

    ns = sorted(report.mpjpe_stats)
    by_n = {n: [c[2] for c in report.combinations if c[0] == n and np.isfinite(c[2])] for n in ns}
    p = out / "mpjpe_boxplot.svg"
    plotting.box_plot_svg(p, [by_n[n] for n in ns], [f"N={n}" for n in ns], ylabel="MPJPE [mm]",
                          title="MPJPE over camera combinations", show_outliers=True)
    written.append(p)
    for curves, name, xlabel, ylabel in (
            (report.valid_curves, "valid_joints.svg", "reprojection threshold [px]", "valid joints [%]"),
            (report.below_curves, "combinations_below.svg", "MPJPE threshold [mm]", "combinations below [%]")):
        if curves is None:
            continue
        series = {f"N={n}": (curves.thresholds, 100 * curves.curves[n]) for n in sorted(curves.curves)}
        p = out / name
        plotting.line_plot_svg(p, series, xlabel=xlabel, ylabel=ylabel)
        written.append(p)
    return written


def load_report(out_dir: str | Path) -> EvalReport:
    """Re-read the CSV tables written by :func:`emit_report`."""
    out = Path(out_dir)
    rep = EvalReport()
    p = out / "metrics_2d.csv"
    if p.exists():
        with open(p, newline="") as fh:
            vals = {r["metric"]: float(r["value"]) for r in csv.DictReader(fh)}
        rep.metrics_2d = ApAr(vals["ap"], vals["ap50"], vals["ar"], vals["ar50"])
    p = out / "combinations.csv"
    if not p.exists():
        return rep
    with open(p, newline="") as fh:
        rep.combinations = [(int(r["n_cameras"]), tuple(r["cameras"].split("+")), float(r["mpjpe_mm"]),
                             float(r["valid_fraction"])) for r in csv.DictReader(fh)]
    with open(out / "mpjpe_by_n.csv", newline="") as fh:
        for r in csv.DictReader(fh):
            outl = tuple(float(x) for x in r["outliers_mm"].split(";") if x)
            rep.mpjpe_stats[int(r["n_cameras"])] = BoxStats(
                int(r["n_combinations"]), float(r["mean_mm"]), float(r["q1_mm"]), float(r["median_mm"]),
                float(r["q3_mm"]), float(r["lower_whisker_mm"]), float(r["upper_whisker_mm"]), outl)
    if (out / "valid_joints.csv").exists():
        rep.valid_curves = _read_curves(out / "valid_joints.csv")
    if (out / "combinations_below.csv").exists():
        rep.below_curves = _read_curves(out / "combinations_below.csv")
    return rep
