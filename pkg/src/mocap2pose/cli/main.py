"""Command-line entry point.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 numerical failure (including failed self-checks in ``demo`` and
``gradcheck``). The log level comes from ``-v``/``-q`` or the
``MOCAP2POSE_LOG_LEVEL`` environment variable.
"""

from __future__ import annotations

import argparse
import contextlib
import dataclasses
import logging
import os
import sys

import numpy as np

from .. import __version__
from ..body_model import BodyModelError
from ..eval import UndefinedMetricError
from ..fitting import RoughFitError
from ..mocap import FilterError, MarkerFileError
from ..multiview import CalibrationError, DegenerateGeometryError
from ..optim import OptimizationError
from ..synth import AnnotationError
from . import commands
from .config import PATH_KEYS, ConfigError, PipelineConfig, load_config

logger = logging.getLogger("mocap2pose")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERICAL = 0, 1, 2, 3
LOG_ENV = "MOCAP2POSE_LOG_LEVEL"

NUMERICAL_ERRORS = (OptimizationError, DegenerateGeometryError, UndefinedMetricError, np.linalg.LinAlgError,
                    FloatingPointError)
DATA_ERRORS = (FileNotFoundError, MarkerFileError, BodyModelError, CalibrationError, AnnotationError, FilterError,
               RoughFitError, ValueError, OSError)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """Raises instead of exiting so that usage errors map to exit code 1."""

    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _common(p: argparse.ArgumentParser, paths: tuple[str, ...]) -> None:
    p.add_argument("--config", help="YAML pipeline configuration")
    p.add_argument("--seed", type=int, help="global seed (overrides the config)")
    p.add_argument("--threads", type=int, help="cap on BLAS threads")
    p.add_argument("--out", help="output directory (overrides paths.output)")
    for name in paths:
        p.add_argument(f"--{name}", help=f"overrides paths.{name}")


def _triangulation_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--min-cameras", type=int, help="fewest cameras for a valid joint (default 3)")
    p.add_argument("--reproj-threshold-px", type=float, help="largest accepted reprojection error (default 15)")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="mocap2pose", description="Marker fitting, synthetic multi-view keypoints and evaluation.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("-v", "--verbose", action="count", default=0)
    ap.add_argument("-q", "--quiet", action="store_true")
    sub = ap.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("filter", help="drop unreliable marker trajectories")
    _common(p, ("markers", "layout"))
    p.add_argument("--units", help="units of the marker file (mm, cm or m) when its header lacks them")
    p.add_argument("--no-jump-filter", action="store_true", help="disable the jump-pattern filter")

    p = sub.add_parser("fit", help="fit the body model to a marker sequence")
    _common(p, ("markers", "layout", "model", "prior"))
    p.add_argument("--units", help="units of the marker file (mm, cm or m) when its header lacks them")

    p = sub.add_parser("synth", help="render 2D keypoint annotations of a motion from every camera")
    _common(p, ("motion", "model", "calibration"))
    p.add_argument("--stride", type=int, help="annotate every N-th frame")
    p.add_argument("--no-predictions", action="store_true", help="skip the simulated detector output")

    p = sub.add_parser("triangulate", help="triangulate predicted keypoints")
    _common(p, ("predictions", "calibration"))
    _triangulation_flags(p)

    p = sub.add_parser("eval2d", help="COCO AP/AR of predictions")
    _common(p, ("predictions", "annotations"))

    p = sub.add_parser("eval3d", help="camera-combination sweep")
    _common(p, ("predictions", "annotations", "calibration"))
    _triangulation_flags(p)

    p = sub.add_parser("demo", help="end-to-end run with every self-check on generated data")
    _common(p, ())
    p.add_argument("--no-jump-filter", action="store_true", help="disable the jump-pattern filter")
    p.add_argument("--stride", type=int, default=20, help="annotate every N-th fitted frame (default 20)")

    p = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    _common(p, ())
    p.add_argument("--states", type=int, default=20, help="random states per objective")
    return ap


def resolve_config(args: argparse.Namespace) -> PipelineConfig:
    """Config file first, then command-line overrides."""
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.threads is not None:
        cfg.threads = args.threads
    if args.out is not None:
        cfg.paths.output = args.out
    for name in PATH_KEYS:
        v = getattr(args, name, None)
        if v is not None:
            setattr(cfg.paths, name, v)
    if getattr(args, "no_jump_filter", False):
        cfg.filter = dataclasses.replace(cfg.filter, jump_filter_enabled=False)
    if getattr(args, "stride", None) is not None and args.command == "synth":
        cfg.scene = dataclasses.replace(cfg.scene, stride=args.stride)
    tri = {}
    if getattr(args, "min_cameras", None) is not None:
        tri["min_cameras"] = args.min_cameras
    if getattr(args, "reproj_threshold_px", None) is not None:
        tri["reproj_threshold_px"] = args.reproj_threshold_px
    if tri:
        try:
            cfg.triangulation = dataclasses.replace(cfg.triangulation, **tri)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"triangulation: {exc}") from None
    cfg.validate_paths()
    return cfg


def _log_level(args: argparse.Namespace | None) -> int:
    if args is not None and args.quiet:
        return logging.ERROR
    if args is not None and args.verbose:
        return logging.DEBUG if args.verbose > 1 else logging.INFO
    name = os.environ.get(LOG_ENV, "WARNING").upper()
    level = logging.getLevelName(name)
    return level if isinstance(level, int) else logging.WARNING


def _configure_logging(level: int) -> None:
    root = logging.getLogger()
    if not root.handlers:
        logging.basicConfig(format="%(asctime)s %(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    logger.setLevel(level)


def _thread_limit(n: int):
    if n <= 0:
        return contextlib.nullcontext()
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:
        logger.warning("threadpoolctl is not installed; --threads ignored")
        return contextlib.nullcontext()
    return threadpool_limits(n)


def run(args: argparse.Namespace) -> int:
    cfg = resolve_config(args)
    with _thread_limit(cfg.threads):
        cmd = args.command
        if cmd == "filter":
            commands.cmd_filter(cfg, units=args.units)
        elif cmd == "fit":
            commands.cmd_fit(cfg, units=args.units)
        elif cmd == "synth":
            commands.cmd_synth(cfg, with_predictions=not args.no_predictions)
        elif cmd == "triangulate":
            commands.cmd_triangulate(cfg)
        elif cmd == "eval2d":
            commands.cmd_eval2d(cfg)
        elif cmd == "eval3d":
            commands.cmd_eval3d(cfg)
        elif cmd == "gradcheck":
            _, ok = commands.cmd_gradcheck(cfg, states=args.states)
            return EXIT_OK if ok else EXIT_NUMERICAL
        elif cmd == "demo":
            from .demo import cmd_demo

            man, results = cmd_demo(cfg, jump_filter=not args.no_jump_filter, stride=args.stride)
            print(f"manifest content hash {man.content_hash()}")
            return EXIT_OK if man.status == "ok" else EXIT_NUMERICAL
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    args = None
    try:
        args = build_parser().parse_args(argv)
        _configure_logging(_log_level(args))
        return run(args)
    except UsageError as exc:
        print(f"{exc}\nrun 'mocap2pose --help' for usage", file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NUMERICAL_ERRORS as exc:
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except DATA_ERRORS as exc:
        print(f"data error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
