"""TOML loading with diagnostics that carry the file name and line."""

from __future__ import annotations

import sys
from pathlib import Path
from typing import Union

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import ConfigError


def load_toml(path: Union[str, Path]) -> dict:
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"{path}: no such file") from None
    except tomllib.TOMLDecodeError as exc:
        # message already includes "(at line N, column M)"
        raise ConfigError(f"{path}: {exc}") from None


def loads_toml(text: str, origin: str = "<string>") -> dict:
    try:
        return tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{origin}: {exc}") from None


DATA_DIR = Path(__file__).parent / "data"


def bundled(kind: str, name: str) -> Path:
    """Path of a bundled ``topologies`` or ``scenarios`` file, by stem or file name."""
    path = DATA_DIR / kind / (name if name.endswith(".toml") else f"{name}.toml")
    if not path.exists():
        raise ConfigError(f"no bundled {kind[:-1]} named {name!r}")
    return path


def bundled_names(kind: str) -> list[str]:
    return sorted(p.stem for p in (DATA_DIR / kind).glob("*.toml"))
