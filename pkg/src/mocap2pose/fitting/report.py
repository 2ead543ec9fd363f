"""Per-marker distance statistics between observed and fitted virtual markers."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

import numpy as np

from .. import body_model as bm
from ..mocap import MarkerSequence
from .correspondence import posed_marker_points
from .pipeline import MotionSolution

CSV_FIELDS = ("marker", "n_frames", "mean_mm", "q1_mm", "median_mm", "q3_mm", "max_mm")


@dataclass
class MarkerStats:
    n_frames: int
    mean: float
    q1: float
    median: float
    q3: float
    max: float


@dataclass
class MarkerErrorReport:
    distances: dict[str, np.ndarray]  # per marker, valid frames only, in meters
    stats: dict[str, MarkerStats]

    @property
    def overall_mean(self) -> float:
        d = [v for v in self.distances.values() if v.size]
        return float(np.concatenate(d).mean()) if d else float("nan")

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(CSV_FIELDS)
            for name, s in self.stats.items():
                w.writerow([name, s.n_frames] + [f"{1e3 * v:.4f}" for v in (s.mean, s.q1, s.median, s.q3, s.max)])

    def to_svg(self, path: str | Path, title: str = "Marker distance to fitted surface") -> None:
        from ..plotting import box_plot_svg
        names = [n for n in self.stats if self.distances[n].size]
        box_plot_svg(path, [1e3 * self.distances[n] for n in names], names, ylabel="distance (mm)", title=title)


def marker_error_report(solution: MotionSolution, seq: MarkerSequence, correspondence: Mapping[str, int],
                        model: bm.BodyModelData, offset: float = bm.DEFAULT_MARKER_OFFSET,
                        chunk: int = 512) -> MarkerErrorReport:
    """Distances between observed markers and virtual markers on the fitted body.

    Virtual markers sit ``offset`` above their vertex along the posed normal.
    Only frames where a marker is valid contribute.
    """
    if solution.n_frames != seq.n_frames:
        raise ValueError(f"solution has {solution.n_frames} frames, sequence {seq.n_frames}")
    names = [n for n in seq.marker_names if n in correspondence]
    idx = np.array([seq.index(n) for n in names], dtype=int)
    vids = np.array([int(correspondence[n]) for n in names], dtype=int)
    d = np.full((seq.n_frames, len(names)), np.nan)
    rv = solution.rotvecs()
    for s in range(0, seq.n_frames, chunk):
        e = min(s + chunk, seq.n_frames)
        pts = posed_marker_points(model, rv[s:e], solution.translation[s:e], solution.betas, vids, offset)
        d[s:e] = np.linalg.norm(pts - seq.positions[s:e][:, idx], axis=2)
    distances, stats = {}, {}
    for k, name in enumerate(names):
        v = d[:, k][np.isfinite(d[:, k])]
        distances[name] = v
        if v.size:
            q1, med, q3 = np.percentile(v, [25, 50, 75])
            stats[name] = MarkerStats(int(v.size), float(v.mean()), float(q1), float(med), float(q3), float(v.max()))
        else:
            stats[name] = MarkerStats(0, *(float("nan"),) * 5)
    return MarkerErrorReport(distances, stats)
