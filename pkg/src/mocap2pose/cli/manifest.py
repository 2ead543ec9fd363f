"""Run manifests: what ran, on which inputs, with which settings and outputs."""

from __future__ import annotations

import hashlib
import json
import os
import platform
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .. import __version__

MANIFEST_FORMAT = "mocap2pose-manifest-v1"
VOLATILE_KEYS = ("started", "finished", "seconds", "platform", "output")  # left out of the content hash


def file_sha256(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, np.generic):
        return x.item()
    if isinstance(x, Path):
        return str(x)
    return x


def _strip(x):
    if isinstance(x, dict):
        return {k: _strip(v) for k, v in x.items() if k not in VOLATILE_KEYS}
    if isinstance(x, list):
        return [_strip(v) for v in x]
    return x


@dataclass
class RunManifest:
    command: str
    seed: int
    config: dict
    config_hash: str
    tool: str = "mocap2pose"
    version: str = __version__
    inputs: dict[str, str] = field(default_factory=dict)  # name -> sha256
    outputs: dict[str, str] = field(default_factory=dict)  # path relative to the output dir -> sha256
    stages: list[dict] = field(default_factory=list)
    status: str = "running"
    started: str = field(default_factory=_now)
    finished: str | None = None
    platform: str = field(default_factory=platform.platform)

    def add_input(self, name: str, path: str | Path) -> None:
        self.inputs[name] = file_sha256(path)

    def add_outputs(self, out_dir: str | Path, paths) -> None:
        for p in paths:
            self.outputs[Path(os.path.relpath(p, out_dir)).as_posix()] = file_sha256(p)

    def stage(self, name: str, seconds: float | None = None, **summary) -> None:
        entry = {"name": name, **_jsonable(summary)}
        if seconds is not None:
            entry["seconds"] = round(float(seconds), 3)
        self.stages.append(entry)

    def finish(self, status: str = "ok") -> None:
        self.status = status
        self.finished = _now()

    def to_dict(self) -> dict:
        d = _jsonable(asdict(self))
        d["format"] = MANIFEST_FORMAT
        d["content_hash"] = self.content_hash()
        return d

    def content_hash(self) -> str:
        """SHA-256 over everything except timestamps, durations, the host and the output directory."""
        d = _strip(_jsonable(asdict(self)))
        return hashlib.sha256(json.dumps(d, sort_keys=True, allow_nan=True).encode()).hexdigest()

    def write(self, path: str | Path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.to_dict(), indent=1, sort_keys=True))
        return path


def load_manifest(path: str | Path) -> dict:
    d = json.loads(Path(path).read_text())
    if d.get("format") != MANIFEST_FORMAT:
        raise ValueError(f"{path}: not a run manifest")
    return d
