"""Runtime configuration: file loading and component construction."""

from __future__ import annotations

from dataclasses import dataclass, replace
import json
import os
from pathlib import Path
import shlex
import sys

from .adapter import StdioAdapter, TcpAdapter
from .errors import ConfigError
from .pipeline import AdapterDetector, ImageDirectorySource, RawStreamSource, ReplayDetector

ENV_VAR = "SITEGUARD_CONFIG"

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib


@dataclass
class AppConfig:
    source_kind: str = "image_directory"
    source_path: str | None = None
    frame_rate_hint: float = 30.0
    detector: str | None = None
    calibration_path: str = "calibration.json"
    threshold_ft: float = 6.0
    face_confidence_floor: float = 0.5
    person_confidence_floor: float = 0.5
    output_dir: str = "output"
    port: int = 8080
    adapter_deadline_ms: int = 1000

    def merged(self, **overrides) -> "AppConfig":
        clean = {k: v for k, v in overrides.items() if v is not None}
        return replace(self, **clean)


def load_config(path=None) -> AppConfig:
    """Read TOML or JSON config; SITEGUARD_CONFIG overrides a missing path."""
    if path is None:
        path = os.environ.get(ENV_VAR)
    if path is None:
        return AppConfig()
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {p}")
    if p.suffix == ".toml":
        data = tomllib.loads(p.read_text(encoding="utf-8"))
    elif p.suffix == ".json":
        data = json.loads(p.read_text(encoding="utf-8"))
    else:
        raise ConfigError(f"config must be .toml or .json; got {p.suffix!r}")
    unknown = set(data) - set(AppConfig.__dataclass_fields__)
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    return AppConfig(**data)


def build_detector(spec: str, deadline_ms: int = 1000):
    """Construct a detector from its spec string.

    Forms: "replay:FILE.jsonl", "command:CMDLINE" (stdio adapter), or
    "tcp:HOST:PORT".
    """
    if spec is None:
        raise ConfigError("no detector configured")
    kind, _, rest = spec.partition(":")
    if kind == "replay":
        if not rest:
            raise ConfigError("replay detector needs a file path")
        return ReplayDetector.load(rest)
    if kind == "command":
        if not rest:
            raise ConfigError("command detector needs a command line")
        return AdapterDetector(StdioAdapter(shlex.split(rest), deadline_ms=deadline_ms))
    if kind == "tcp":
        host, _, port = rest.rpartition(":")
        if not host or not port.isdigit():
            raise ConfigError(f"tcp detector needs host:port; got {rest!r}")
        return AdapterDetector(TcpAdapter(host, int(port), deadline_ms=deadline_ms))
    raise ConfigError(f"unknown detector kind: {kind!r}")


def build_source(cfg: AppConfig):
    if cfg.source_kind == "image_directory":
        if not cfg.source_path:
            raise ConfigError("image_directory source needs source_path")
        return ImageDirectorySource(cfg.source_path, frame_rate_hint=cfg.frame_rate_hint)
    if cfg.source_kind == "raw_stream":
        return RawStreamSource(sys.stdin.buffer, frame_rate_hint=cfg.frame_rate_hint)
    raise ConfigError(f"unknown source kind: {cfg.source_kind!r}")
