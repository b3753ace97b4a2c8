"""Flat ``key = value`` config files and run manifests.

Precedence, lowest to highest: command defaults, config file, CLI flags.
Lines starting with ``#`` and blank lines are ignored.
"""

from __future__ import annotations

import hashlib
import os
import platform
import subprocess
from typing import Dict, Iterable, Mapping, Optional

import numpy as np

from . import __version__
from .errors import ConfigError


def parse_config_text(text: str, source: str = "<config>") -> Dict[str, str]:
    out: Dict[str, str] = {}
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep or not key.strip():
            raise ConfigError(f"{source}:{n}: expected key = value, got {raw!r}")
        out[key.strip()] = value.strip()
    return out


def read_config(path) -> Dict[str, str]:
    try:
        with open(path) as f:
            return parse_config_text(f.read(), str(path))
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}")


def format_config(cfg: Mapping[str, object]) -> str:
    return "".join(f"{k} = {v}\n" for k, v in cfg.items())


def merge(*layers: Optional[Mapping[str, object]]) -> Dict[str, str]:
    out: Dict[str, str] = {}
    for layer in layers:
        for k, v in (layer or {}).items():
            if v is not None:
                out[k] = str(v)
    return out


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def build_id() -> str:
    """Git commit of the source tree when available, else a hash of the package sources."""
    here = os.path.dirname(os.path.abspath(__file__))
    try:
        rev = subprocess.run(["git", "-C", here, "rev-parse", "--short", "HEAD"], capture_output=True,
                             text=True, timeout=5)
        if rev.returncode == 0 and rev.stdout.strip():
            return f"{__version__}+git.{rev.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    h = hashlib.sha256()
    for root, _, files in sorted(os.walk(here)):
        for name in sorted(files):
            if name.endswith(".py"):
                with open(os.path.join(root, name), "rb") as f:
                    h.update(f.read())
    return f"{__version__}+src.{h.hexdigest()[:12]}"


def write_manifest(path, command: str, config: Mapping[str, object], seed: int,
                   outputs: Iterable[str] = ()) -> Dict[str, str]:
    """Flat manifest: resolved config, seed, build id, and sha256 of every output."""
    entries: Dict[str, str] = {
        "command": command,
        "build_id": build_id(),
        "seed": str(seed),
        "python": platform.python_version(),
        "numpy": np.__version__,
    }
    for k, v in sorted(config.items()):
        entries[f"config.{k}"] = str(v)
    base = os.path.dirname(os.path.abspath(path))
    for out in sorted(outputs):
        entries[f"output.{os.path.relpath(os.path.abspath(out), base)}"] = file_sha256(out)
    with open(path, "w") as f:
        f.write(format_config(entries))
    return entries


def read_manifest(path) -> Dict[str, str]:
    return read_config(path)


def manifest_config(manifest: Mapping[str, str]) -> Dict[str, str]:
    return {k[len("config."):]: v for k, v in manifest.items() if k.startswith("config.")}
