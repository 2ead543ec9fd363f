"""Pipeline configuration: a YAML document mapped onto dataclasses.

Top-level keys (all optional):

  seed: int                      global seed for every generator
  threads: int                   BLAS thread cap (0 = library default)
  paths:                         markers, model, layout, calibration, annotations,
                                 predictions, motion, prior, output
  filter:                        FilterConfig fields
  fit:
    weights:                     FitWeights fields
    options:                     FitConfig fields
    stages:                      list of {optimizer, free_parameters, iterations,
                                 weight_overrides, learning_rate, name}
  scene:                         SceneConfig fields
  triangulation:                 TriangulationConfig fields
  predictions:                   PredictionNoise fields (synthetic detector)
  eval:                          EvalConfig fields

Unknown keys anywhere are rejected. Relative paths are resolved against
the directory of the config file.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import typing
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from ..fitting import FitConfig, FitWeights, StageSpec, default_schedule
from ..mocap import FilterConfig
from ..multiview import TriangulationConfig
from ..synth import PredictionNoise
from ..eval.report import DEFAULT_MPJPE_THRESHOLDS, DEFAULT_REPROJ_THRESHOLDS


class ConfigError(ValueError):
    pass


PATH_KEYS = ("markers", "model", "layout", "calibration", "annotations", "predictions", "motion", "prior")


@dataclass
class PathsConfig:
    markers: str | None = None
    model: str | None = None  # body model .npz; the built-in test body when absent
    layout: str | None = None  # marker layout JSON
    calibration: str | None = None
    annotations: str | None = None  # ground-truth keypoints (COCO JSON)
    predictions: str | None = None  # predicted keypoints (COCO JSON with scores)
    motion: str | None = None  # fitted or generated motion .npz
    prior: str | None = None  # pose prior .npz; fitted on generated poses when absent
    output: str = "out"


@dataclass
class FitSection:
    weights: FitWeights = field(default_factory=FitWeights)
    options: FitConfig = field(default_factory=FitConfig)
    stages: list[StageSpec] = field(default_factory=default_schedule)


@dataclass
class SceneConfig:
    n_cameras: int = 8
    radius: float = 10.0
    heights: tuple[float, ...] = (1.0, 5.5)
    target: tuple[float, float, float] = (0.0, 0.0, 4.0)
    focal_px: float = 900.0
    stride: int = 1  # annotate every stride-th frame
    surface_tolerance: float = 0.12
    svg_frames: int = 1  # skeleton drawings for the first frames of each camera

    def __post_init__(self):
        if self.n_cameras < 2:
            raise ValueError("n_cameras must be >= 2")
        if self.stride < 1:
            raise ValueError("stride must be >= 1")


@dataclass
class EvalConfig:
    reproj_thresholds: tuple[float, ...] = DEFAULT_REPROJ_THRESHOLDS
    mpjpe_thresholds: tuple[float, ...] = DEFAULT_MPJPE_THRESHOLDS
    n_min: int | None = None  # smallest camera count in the sweep (default: min_cameras)
    n_max: int | None = None  # largest (default: all cameras)


@dataclass
class PipelineConfig:
    seed: int = 0
    threads: int = 0
    paths: PathsConfig = field(default_factory=PathsConfig)
    filter: FilterConfig = field(default_factory=FilterConfig)
    fit: FitSection = field(default_factory=FitSection)
    scene: SceneConfig = field(default_factory=SceneConfig)
    triangulation: TriangulationConfig = field(default_factory=TriangulationConfig)
    predictions: PredictionNoise = field(default_factory=PredictionNoise)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def to_dict(self) -> dict:
        return _plain(dataclasses.asdict(self))

    def content_hash(self) -> str:
        """Hash of everything that changes results; the output directory is left out."""
        d = self.to_dict()
        d["paths"].pop("output", None)
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()

    def validate_paths(self) -> None:
        """Every input path that is set must exist."""
        for n in PATH_KEYS:
            v = getattr(self.paths, n)
            if v is not None and not Path(v).exists():
                raise FileNotFoundError(f"paths.{n}: {v} does not exist")

    def require(self, *names: str) -> list[Path]:
        """Paths that must be set and exist for a command."""
        out = []
        for n in names:
            v = getattr(self.paths, n)
            if v is None:
                raise ConfigError(f"paths.{n} is required (config file or --{n.replace('_', '-')})")
            p = Path(v)
            if not p.exists():
                raise FileNotFoundError(f"paths.{n}: {p} does not exist")
            out.append(p)
        return out


def _plain(x):
    if isinstance(x, dict):
        return {k: _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, np.generic):
        return x.item()
    return x


def _build(cls, data: Any, where: str):
    """Instantiate dataclass ``cls`` from a mapping, rejecting unknown keys."""
    if data is None:
        return cls()
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected a mapping, got {type(data).__name__}")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls) if f.init}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {', '.join(unknown)}; allowed: {', '.join(sorted(names))}")
    kw = {}
    for k, v in data.items():
        t = hints.get(k)
        if isinstance(v, list) and t is not None and "tuple" in str(t):
            v = tuple(v)
        kw[k] = v
    try:
        return cls(**kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from None


def config_from_dict(data: dict | None, base_dir: str | Path | None = None) -> PipelineConfig:
    data = dict(data or {})
    top = {f.name for f in dataclasses.fields(PipelineConfig)}
    unknown = sorted(set(data) - top)
    if unknown:
        raise ConfigError(f"unknown top-level key(s) {', '.join(unknown)}; allowed: {', '.join(sorted(top))}")
    cfg = PipelineConfig()
    if "seed" in data:
        cfg.seed = int(data["seed"])
    if "threads" in data:
        cfg.threads = int(data["threads"])
    cfg.paths = _build(PathsConfig, data.get("paths"), "paths")
    if base_dir is not None:
        for k in PATH_KEYS + ("output",):
            v = getattr(cfg.paths, k)
            if v is not None and not Path(v).is_absolute():
                setattr(cfg.paths, k, str(Path(base_dir) / v))
    cfg.filter = _build(FilterConfig, data.get("filter"), "filter")
    fit = data.get("fit") or {}
    if not isinstance(fit, dict):
        raise ConfigError("fit: expected a mapping")
    bad = sorted(set(fit) - {"weights", "options", "stages"})
    if bad:
        raise ConfigError(f"fit: unknown key(s) {', '.join(bad)}; allowed: options, stages, weights")
    stages = default_schedule()
    if fit.get("stages") is not None:
        if not isinstance(fit["stages"], list) or not fit["stages"]:
            raise ConfigError("fit.stages: expected a non-empty list")
        stages = [_build(StageSpec, s, f"fit.stages[{i}]") for i, s in enumerate(fit["stages"])]
    cfg.fit = FitSection(_build(FitWeights, fit.get("weights"), "fit.weights"),
                         _build(FitConfig, fit.get("options"), "fit.options"), stages)
    cfg.scene = _build(SceneConfig, data.get("scene"), "scene")
    cfg.triangulation = _build(TriangulationConfig, data.get("triangulation"), "triangulation")
    cfg.predictions = _build(PredictionNoise, data.get("predictions"), "predictions")
    cfg.eval = _build(EvalConfig, data.get("eval"), "eval")
    return cfg


def load_config(path: str | Path | None) -> PipelineConfig:
    if path is None:
        return PipelineConfig()
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"config file {path} does not exist")
    try:
        data = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f"line {mark.line + 1}: " if mark is not None else ""
        raise ConfigError(f"{path}: {where}{getattr(exc, 'problem', exc)}") from None
    return config_from_dict(data, path.parent)
