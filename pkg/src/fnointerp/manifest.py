"""Run manifests: everything needed to re-produce a run's numbers."""

from __future__ import annotations

import hashlib
import json
import platform
import time
from dataclasses import dataclass, field, asdict
from pathlib import Path

from . import __version__
from .backend import BACKEND_NAME


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class RunManifest:
    command: str
    config: dict
    seeds: list
    input_hashes: dict = field(default_factory=dict)
    metrics: dict = field(default_factory=dict)
    tool_version: str = __version__
    kernel_backend: str = BACKEND_NAME
    platform: str = platform.platform()
    wall_clock_s: float = 0.0
    started_at: str = field(default_factory=lambda: time.strftime("%Y-%m-%dT%H:%M:%S"))

    def save(self, out_dir) -> Path:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        path = out_dir / "manifest.json"
        path.write_text(json.dumps(asdict(self), indent=2, sort_keys=True,
                                   default=_jsonable) + "\n")
        return path

    @classmethod
    def load(cls, out_dir) -> "RunManifest":
        data = json.loads((Path(out_dir) / "manifest.json").read_text())
        known = {f for f in cls.__dataclass_fields__}
        return cls(**{k: v for k, v in data.items() if k in known})


def _jsonable(obj):
    if hasattr(obj, "tolist"):
        return obj.tolist()
    if hasattr(obj, "item"):
        return obj.item()
    return str(obj)
