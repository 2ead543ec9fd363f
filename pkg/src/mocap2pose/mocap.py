"""Marker sequences: file IO and the cascade of trajectory filters run before fitting.

Missing samples are NaN. Filters only ever remove whole marker columns;
surviving trajectories are passed through untouched.
"""

from __future__ import annotations

import enum
import logging
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

logger = logging.getLogger(__name__)

UNIT_SCALE = {"m": 1.0, "mm": 1e-3, "cm": 1e-2}
VERTICAL_AXES = {"x": 0, "y": 1, "z": 2}


class MarkerFileError(ValueError):
    """Parse failure; carries the offending line number when known."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class FilterError(RuntimeError):
    pass


@dataclass
class MarkerSequence:
    marker_names: list[str]
    frame_rate: float
    positions: np.ndarray  # (T, M, 3) meters, NaN = missing
    residuals: np.ndarray | None = None  # (T, M) meters
    label_valid: np.ndarray | None = None  # (M,) bool

    def __post_init__(self):
        self.marker_names = [str(n) for n in self.marker_names]
        self.positions = np.asarray(self.positions, dtype=float)
        if self.positions.ndim != 3 or self.positions.shape[2] != 3:
            raise ValueError("positions must be (T, M, 3)")
        T, M, _ = self.positions.shape
        if T < 1:
            raise ValueError("a marker sequence needs at least one frame")
        if M != len(self.marker_names):
            raise ValueError(f"{M} marker columns but {len(self.marker_names)} names")
        if not self.frame_rate > 0:
            raise ValueError("frame_rate must be positive")
        if self.residuals is not None:
            self.residuals = np.asarray(self.residuals, dtype=float)
            if self.residuals.shape != (T, M):
                raise ValueError("residuals must be (T, M)")
        if self.label_valid is None:
            self.label_valid = np.ones(M, dtype=bool)
        else:
            self.label_valid = np.asarray(self.label_valid, dtype=bool).reshape(M)

    @property
    def n_frames(self) -> int:
        return self.positions.shape[0]

    @property
    def n_markers(self) -> int:
        return self.positions.shape[1]

    @property
    def valid(self) -> np.ndarray:
        """(T, M) mask of present samples."""
        return np.all(np.isfinite(self.positions), axis=2)

    def select(self, keep: np.ndarray) -> "MarkerSequence":
        keep = np.asarray(keep, dtype=bool)
        return MarkerSequence(
            [n for n, k in zip(self.marker_names, keep) if k],
            self.frame_rate,
            self.positions[:, keep],
            None if self.residuals is None else self.residuals[:, keep],
            self.label_valid[keep],
        )

    def index(self, name: str) -> int:
        return self.marker_names.index(name)


# --------------------------------------------------------------------------- file io

def _parse_float(tok: str) -> float:
    tok = tok.strip()
    if not tok:
        return np.nan
    try:
        return float(tok)
    except ValueError:
        return np.nan


def read_trc(path: str | Path, units: str | None = None) -> MarkerSequence:
    """Read a TRC-style tab-separated marker file.

    Layout (one header block, then data rows)::

        PathFileType  4  (X/Y/Z)  <name>
        DataRate  CameraRate  NumFrames  NumMarkers  Units  ...
        <values>
        Frame#  Time  <marker 1>  <tab>  <tab>  <marker 2> ...
        <blank>  <blank>  X1  Y1  Z1  X2  Y2  Z2 ...
        <frame> <time> x y z ...

    A blank or unparseable cell marks that sample missing. A coordinate label
    row that uses ``X1 Y1 Z1 R1`` quadruplets adds a per-sample residual
    column. ``units`` overrides the header's Units field.
    """
    path = Path(path)
    lines = path.read_text().splitlines()
    if len(lines) < 5:
        raise MarkerFileError("file too short for a TRC header", line=len(lines))
    keys = lines[1].split("\t")
    vals = lines[2].split("\t")
    if len(keys) != len(vals) or "DataRate" not in keys:
        raise MarkerFileError("malformed rate/units header", line=3)
    header = dict(zip([k.strip() for k in keys], [v.strip() for v in vals]))
    try:
        rate = float(header["DataRate"])
        n_markers = int(header["NumMarkers"])
    except (KeyError, ValueError) as exc:
        raise MarkerFileError(f"malformed header value ({exc})", line=3) from None
    unit = (units or header.get("Units", "m")).strip()
    if unit not in UNIT_SCALE:
        raise MarkerFileError(f"unknown unit {unit!r}", line=3)
    scale = UNIT_SCALE[unit]

    name_cells = lines[3].split("\t")
    names = [c.strip() for c in name_cells[2:] if c.strip()]
    coord_cells = [c.strip() for c in lines[4].split("\t")[2:] if c.strip()]
    has_residual = any(c.upper().startswith("R") for c in coord_cells)
    per_marker = 4 if has_residual else 3
    if len(names) != n_markers:
        raise MarkerFileError(f"header declares {n_markers} markers, name row has {len(names)}", line=4)
    if len(coord_cells) not in (0, per_marker * n_markers):
        raise MarkerFileError("coordinate label row does not match marker count", line=5)

    rows = []
    for lineno, line in enumerate(lines[5:], start=6):
        if not line.strip():
            continue
        cells = line.split("\t")
        if len(cells) > 2 + per_marker * n_markers or len(cells) < 2:
            raise MarkerFileError(f"expected {2 + per_marker * n_markers} columns, found {len(cells)}",
                                  line=lineno)
        cells = cells + [""] * (2 + per_marker * n_markers - len(cells))
        rows.append([_parse_float(c) for c in cells[2:]])
    if not rows:
        raise MarkerFileError("no data rows", line=len(lines))
    data = np.asarray(rows).reshape(len(rows), n_markers, per_marker)
    pos = data[:, :, :3] * scale
    # a sample is present only when all three coordinates are
    pos[~np.all(np.isfinite(pos), axis=2)] = np.nan
    residuals = data[:, :, 3] * scale if has_residual else None
    return MarkerSequence(names, rate, pos, residuals)


def write_trc(seq: MarkerSequence, path: str | Path, units: str = "m",
              include_residuals: bool = False) -> None:
    if units not in UNIT_SCALE:
        raise MarkerFileError(f"unknown unit {units!r}")
    scale = 1.0 / UNIT_SCALE[units]
    T, M = seq.n_frames, seq.n_markers
    res = include_residuals and seq.residuals is not None
    out = [f"PathFileType\t4\t(X/Y/Z)\t{Path(path).name}",
           "DataRate\tCameraRate\tNumFrames\tNumMarkers\tUnits\tOrigDataRate\tOrigDataStartFrame\tOrigNumFrames",
           f"{seq.frame_rate:g}\t{seq.frame_rate:g}\t{T}\t{M}\t{units}\t{seq.frame_rate:g}\t1\t{T}"]
    width = 4 if res else 3
    out.append("Frame#\tTime\t" + "\t".join(n + "\t" * (width - 1) for n in seq.marker_names).rstrip("\t"))
    labels = []
    for i in range(1, M + 1):
        labels += [f"X{i}", f"Y{i}", f"Z{i}"] + ([f"R{i}"] if res else [])
    out.append("\t\t" + "\t".join(labels))
    for t in range(T):
        cells = [str(t + 1), f"{t / seq.frame_rate:.6f}"]
        for m in range(M):
            p = seq.positions[t, m]
            if np.all(np.isfinite(p)):
                cells += [repr(float(x * scale)) for x in p]
            else:
                cells += ["", "", ""]
            if res:
                r = seq.residuals[t, m]
                cells.append(repr(float(r * scale)) if np.isfinite(r) else "")
        out.append("\t".join(cells))
    Path(path).write_text("\n".join(out) + "\n")


def save_npz(seq: MarkerSequence, path: str | Path) -> None:
    np.savez(path, marker_names=np.asarray(seq.marker_names), frame_rate=seq.frame_rate,
             positions=seq.positions, label_valid=seq.label_valid,
             **({} if seq.residuals is None else {"residuals": seq.residuals}))


def load_markers(path: str | Path, format_tag: str | None = None, units: str | None = None) -> MarkerSequence:
    """Load a marker file; ``format_tag`` is ``"trc"`` or ``"npz"`` (default: by suffix)."""
    path = Path(path)
    if not path.exists():
        raise MarkerFileError(f"{path} does not exist")
    tag = (format_tag or path.suffix.lstrip(".")).lower()
    if tag in ("trc", "tsv", "txt"):
        return read_trc(path, units=units)
    if tag == "npz":
        with np.load(path, allow_pickle=False) as z:
            scale = UNIT_SCALE[units] if units else 1.0
            return MarkerSequence(z["marker_names"].tolist(), float(z["frame_rate"]), z["positions"] * scale,
                                  z["residuals"] * scale if "residuals" in z.files else None,
                                  z["label_valid"] if "label_valid" in z.files else None)
    raise MarkerFileError(f"unknown marker format {tag!r}")


# --------------------------------------------------------------------------- filters

class DropReason(str, enum.Enum):
    INVALID_LABEL = "invalid_label"
    HIGH_RESIDUAL = "high_residual"
    STATIC = "static"
    JUMP_PATTERN = "jump_pattern"
    RIGID_DISTANCE = "rigid_distance"
    TOO_MANY_GAPS = "too_many_gaps"


@dataclass
class FilterConfig:
    residual_threshold: float = 0.01
    static_motion_threshold: float = 0.05
    jump_pattern_min_correlation: float = 0.8
    jump_filter_enabled: bool = True
    rigid_distance_cv_threshold: float = 0.05
    min_valid_fraction: float = 0.4
    vertical_axis: str = "z"

    def __post_init__(self):
        for name in ("residual_threshold", "static_motion_threshold", "rigid_distance_cv_threshold"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if not -1.0 <= self.jump_pattern_min_correlation <= 1.0:
            raise ValueError("jump_pattern_min_correlation must be in [-1, 1]")
        if not 0.0 <= self.min_valid_fraction <= 1.0:
            raise ValueError("min_valid_fraction must be in [0, 1]")
        if self.vertical_axis not in VERTICAL_AXES:
            raise ValueError("vertical_axis must be one of x, y, z")


Dropped = list[tuple[str, DropReason]]


@dataclass
class FilterReport:
    verdicts: dict[str, str | None] = field(default_factory=dict)  # marker -> None (kept) or reason
    input_count: int = 0
    warnings: list[str] = field(default_factory=list)

    @property
    def kept(self) -> list[str]:
        return [n for n, r in self.verdicts.items() if r is None]

    @property
    def dropped(self) -> dict[str, str]:
        return {n: r for n, r in self.verdicts.items() if r is not None}

    @property
    def kept_count(self) -> int:
        return len(self.kept)

    @property
    def kept_fraction(self) -> float:
        return self.kept_count / self.input_count if self.input_count else 0.0

    def to_dict(self) -> dict:
        return {"input_count": self.input_count, "kept_count": self.kept_count,
                "kept_fraction": self.kept_fraction,
                "verdicts": [{"marker": n, "kept": r is None, "reason": r} for n, r in self.verdicts.items()],
                "warnings": list(self.warnings)}


def _warn(msg: str, sink: list[str] | None = None) -> None:
    logger.warning(msg)
    if sink is not None:
        sink.append(msg)


def _apply(seq: MarkerSequence, drop: dict[int, DropReason]) -> tuple[MarkerSequence, Dropped]:
    keep = np.ones(seq.n_markers, dtype=bool)
    keep[list(drop)] = False
    dropped = [(seq.marker_names[i], r) for i, r in sorted(drop.items())]
    return seq.select(keep), dropped


def _invalid_labels(seq: MarkerSequence) -> dict[int, DropReason]:
    counts: dict[str, int] = {}
    for n in seq.marker_names:
        counts[n.strip()] = counts.get(n.strip(), 0) + 1
    drop = {}
    for i, n in enumerate(seq.marker_names):
        name = n.strip()
        if not seq.label_valid[i] or not name or name.startswith("*") or counts[name] > 1:
            drop[i] = DropReason.INVALID_LABEL
    return drop


def filter_invalid_labels(seq: MarkerSequence, warnings_out: list[str] | None = None
                          ) -> tuple[MarkerSequence, Dropped]:
    """Drop unlabeled or ambiguously labeled markers.

    Invalid: ``label_valid`` false, empty name, a Vicon-style unlabeled name
    (leading ``*``), or a name shared by several columns (all copies go,
    since column identity is what the fit relies on).
    """
    drop = _invalid_labels(seq)
    names = [n.strip() for n in seq.marker_names]
    dups = sorted({names[i] for i in drop if names[i] and names.count(names[i]) > 1})
    if dups:
        _warn(f"duplicate marker names dropped: {dups}", warnings_out)
    return _apply(seq, drop)


def filter_high_residual(seq: MarkerSequence, threshold: float = 0.01,
                         warnings_out: list[str] | None = None) -> tuple[MarkerSequence, Dropped]:
    if seq.residuals is None:
        _warn("no residuals in sequence; residual filter skipped", warnings_out)
        return seq, []
    valid = seq.valid & np.isfinite(seq.residuals)
    drop = {}
    for m in range(seq.n_markers):
        r = seq.residuals[valid[:, m], m]
        if r.size and r.mean() > threshold:
            drop[m] = DropReason.HIGH_RESIDUAL
    return _apply(seq, drop)


def filter_static_markers(seq: MarkerSequence, motion_threshold: float = 0.05,
                          min_valid_fraction: float = 0.4) -> tuple[MarkerSequence, Dropped]:
    """Drop markers that never leave the neighbourhood of their median position.

    Markers present in fewer than ``min_valid_fraction`` of the frames are
    dropped here too, as ``too_many_gaps``.
    """
    valid = seq.valid
    drop = {}
    for m in range(seq.n_markers):
        ok = valid[:, m]
        if ok.mean() < min_valid_fraction or not ok.any():
            drop[m] = DropReason.TOO_MANY_GAPS
            continue
        p = seq.positions[ok, m]
        disp = np.linalg.norm(p - np.median(p, axis=0), axis=1).max()
        if disp < motion_threshold:
            drop[m] = DropReason.STATIC
    return _apply(seq, drop)


def _pearson(a: np.ndarray, b: np.ndarray) -> float:
    a = a - a.mean()
    b = b - b.mean()
    den = np.sqrt((a * a).sum() * (b * b).sum())
    return float((a * b).sum() / den) if den > 0 else 0.0


def jump_pattern_correlations(seq: MarkerSequence, vertical_axis: str = "z") -> np.ndarray:
    """Correlation of every marker's vertical track with the per-frame median track."""
    z = seq.positions[:, :, VERTICAL_AXES[vertical_axis]]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        median = np.nanmedian(z, axis=1)
    out = np.empty(seq.n_markers)
    for m in range(seq.n_markers):
        ok = np.isfinite(z[:, m]) & np.isfinite(median)
        out[m] = _pearson(z[ok, m], median[ok]) if ok.sum() >= 3 else np.nan
    return out


def filter_jump_pattern(seq: MarkerSequence, min_correlation: float = 0.8, enabled: bool = True,
                        vertical_axis: str = "z", warnings_out: list[str] | None = None
                        ) -> tuple[MarkerSequence, Dropped]:
    """Drop markers whose vertical motion does not follow the shared jump pattern."""
    if not enabled:
        return seq, []
    if seq.n_markers < 3:
        _warn("fewer than 3 markers; jump-pattern filter skipped", warnings_out)
        return seq, []
    corr = jump_pattern_correlations(seq, vertical_axis)
    drop = {m: DropReason.JUMP_PATTERN for m in range(seq.n_markers)
            if not np.isfinite(corr[m]) or corr[m] < min_correlation}
    return _apply(seq, drop)


def distance_cv(a: np.ndarray, b: np.ndarray) -> float:
    """Coefficient of variation of |a - b| over frames where both are present."""
    ok = np.all(np.isfinite(a), axis=1) & np.all(np.isfinite(b), axis=1)
    if ok.sum() < 2:
        return np.nan
    d = np.linalg.norm(a[ok] - b[ok], axis=1)
    mean = d.mean()
    return float(d.std() / mean) if mean > 0 else np.inf


def filter_rigid_distance(seq: MarkerSequence, layout: Mapping[str, tuple[str, object]],
                          cv_threshold: float = 0.05, warnings_out: list[str] | None = None
                          ) -> tuple[MarkerSequence, Dropped]:
    """Drop markers whose distances to same-segment markers are not rigid.

    A marker's score is the median distance CV over its same-segment pairs.
    Within a segment the worst offender above threshold is removed and the
    scores are recomputed, so one bad marker does not drag its neighbours
    out with it. A two-marker segment with an inconsistent pair cannot tell
    which marker is at fault and loses both.
    """
    uncovered = [n for n in seq.marker_names if n not in layout]
    if uncovered:
        _warn(f"{len(uncovered)} marker(s) not in layout pass the rigid-distance filter unchecked",
              warnings_out)
    groups: dict[str, list[int]] = {}
    for i, n in enumerate(seq.marker_names):
        if n in layout:
            groups.setdefault(layout[n][0], []).append(i)

    drop = {}
    for members in groups.values():
        alive = list(members)
        pair_cv = {}
        for x in range(len(alive)):
            for y in range(x + 1, len(alive)):
                i, j = alive[x], alive[y]
                pair_cv[(i, j)] = pair_cv[(j, i)] = distance_cv(seq.positions[:, i], seq.positions[:, j])
        while len(alive) >= 2:
            scores = {}
            for i in alive:
                cvs = [pair_cv[(i, j)] for j in alive if j != i and np.isfinite(pair_cv[(i, j)])]
                scores[i] = float(np.median(cvs)) if cvs else 0.0
            worst = max(alive, key=lambda i: (scores[i], -i))
            if scores[worst] <= cv_threshold:
                break
            if len(alive) == 2:
                for i in alive:
                    drop[i] = DropReason.RIGID_DISTANCE
                break
            drop[worst] = DropReason.RIGID_DISTANCE
            alive.remove(worst)
    return _apply(seq, drop)


def _display_names(names: list[str]) -> list[str]:
    seen: dict[str, int] = {}
    out = []
    for n in names:
        k = seen.get(n, 0)
        seen[n] = k + 1
        out.append(n if k == 0 else f"{n}#{k}")
    return out


def run_filter_pipeline(seq: MarkerSequence, config: FilterConfig | None = None,
                        layout: Mapping[str, tuple[str, object]] | None = None
                        ) -> tuple[MarkerSequence, FilterReport]:
    """Invalid labels -> residual -> static/gaps -> jump pattern -> rigid distance."""
    cfg = config or FilterConfig()
    display = _display_names(seq.marker_names)  # report keys stay unique with duplicated labels
    report = FilterReport(verdicts={n: None for n in display}, input_count=seq.n_markers)
    w = report.warnings

    label_drop = _invalid_labels(seq)
    for i, reason in label_drop.items():
        report.verdicts[display[i]] = reason.value
    cur, _ = _apply(seq, label_drop)
    if label_drop:
        logger.info("dropped %d marker(s) with invalid labels", len(label_drop))

    steps = [
        lambda s: filter_high_residual(s, cfg.residual_threshold, w),
        lambda s: filter_static_markers(s, cfg.static_motion_threshold, cfg.min_valid_fraction),
        lambda s: filter_jump_pattern(s, cfg.jump_pattern_min_correlation, cfg.jump_filter_enabled,
                                      cfg.vertical_axis, w),
    ]
    if layout is not None:
        steps.append(lambda s: filter_rigid_distance(s, layout, cfg.rigid_distance_cv_threshold, w))
    else:
        _warn("no marker layout given; rigid-distance filter skipped", w)
    for step in steps:
        if cur.n_markers == 0:
            break
        cur, dropped = step(cur)
        for name, reason in dropped:
            report.verdicts[name] = reason.value
    if cur.n_markers == 0:
        raise FilterError("every marker was discarded by the filters; nothing left to fit")
    logger.info("filters kept %d/%d markers (%.0f%%)", report.kept_count, report.input_count,
                100 * report.kept_fraction)
    return cur, report
