"""
Run manifests: one plain-text ``key = value`` file per command invocation.

Config values are stored under ``config.<key>``, metrics under ``metric.<key>`` and
timings under ``time.<key>``. Floats are written with ``repr`` so they read back exactly;
strings that look like numbers or bools are written as JSON strings so they stay strings.
"""

import json
import logging
import subprocess
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional

from app import __version__
from app.errors import DataError

logger = logging.getLogger(__name__)

MANIFEST_FILE = "manifest.txt"


def describe_version() -> str:
    """``git describe`` output when available, otherwise the package version."""
    try:
        out = subprocess.run(
            ["git", "describe", "--tags", "--always", "--dirty"],
            capture_output=True, text=True, timeout=5, cwd=Path(__file__).resolve().parent,
        )
        if out.returncode == 0 and out.stdout.strip():
            return out.stdout.strip()
    except (OSError, subprocess.SubprocessError) as e:
        logger.debug(f"git describe unavailable: {e}")
    return f"v{__version__}"


def _format(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (list, tuple)):
        return ", ".join(_format(v) for v in value)
    text = str(value)
    if isinstance(value, str) and _needs_quotes(text):
        return json.dumps(text)
    return text


def _needs_quotes(text: str) -> bool:
    """Strings that would read back as a number or bool (or span lines) are written as JSON strings."""
    return _parse_bare(text) != text or text.startswith('"') or any(c in text for c in "\r\n")


def _parse_bare(text: str) -> Any:
    for convert in (int, float):
        try:
            return convert(text)
        except ValueError:
            pass
    if text in ("true", "false"):
        return text == "true"
    return text


def _parse(text: str) -> Any:
    if len(text) >= 2 and text.startswith('"') and text.endswith('"'):
        try:
            return json.loads(text)
        except ValueError:
            pass
    return _parse_bare(text)


@dataclass
class RunManifest:
    command: str
    seed: Optional[int] = None
    numeric_mode: str = "wide"
    version: str = field(default_factory=describe_version)
    config: Dict[str, Any] = field(default_factory=dict)
    timings: Dict[str, float] = field(default_factory=dict)
    metrics: Dict[str, Any] = field(default_factory=dict)

    def to_text(self) -> str:
        lines = [
            f"command = {self.command}",
            f"seed = {_format(self.seed) if self.seed is not None else 'none'}",
            f"numeric_mode = {self.numeric_mode}",
            f"version = {self.version}",
        ]
        lines += [f"config.{k} = {_format(v)}" for k, v in self.config.items()]
        lines += [f"time.{k} = {_format(float(v))}" for k, v in self.timings.items()]
        lines += [f"metric.{k} = {_format(v)}" for k, v in self.metrics.items()]
        return "\n".join(lines) + "\n"

    def write(self, directory) -> Path:
        path = Path(directory) / MANIFEST_FILE
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.to_text())
        logger.info(f"Wrote run manifest {path}")
        return path

    @classmethod
    def read(cls, path) -> "RunManifest":
        path = Path(path)
        if path.is_dir():
            path = path / MANIFEST_FILE
        try:
            lines = path.read_text().splitlines()
        except OSError as exc:
            raise DataError(f"{path}: cannot read manifest ({exc.strerror})") from None
        top: Dict[str, str] = {}
        manifest = cls(command="", version="")
        for lineno, line in enumerate(lines, start=1):
            if not line.strip():
                continue
            if " = " not in line:
                raise DataError(f"{path}:{lineno}: expected 'key = value'")
            key, value = line.split(" = ", 1)
            section, _, name = key.partition(".")
            if section == "config" and name:
                manifest.config[name] = _parse(value)
            elif section == "time" and name:
                manifest.timings[name] = float(value)
            elif section == "metric" and name:
                manifest.metrics[name] = _parse(value)
            else:
                top[key] = value
        manifest.command = top.get("command", "")
        manifest.seed = None if top.get("seed", "none") == "none" else int(top["seed"])
        manifest.numeric_mode = top.get("numeric_mode", "wide")
        manifest.version = top.get("version", "")
        return manifest
