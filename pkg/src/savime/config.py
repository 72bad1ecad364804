"""Configuration: a flat TOML key-value file plus environment overrides.

Precedence, lowest first: built-in defaults, the config file (``--config`` or
``SAVIME_CONFIG``), environment variables, explicit command-line values.
"""
from __future__ import annotations

import os
import sys
from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Any, Mapping

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import SavimeError
from .storage import StorageConfig

DEFAULT_PORT = 65000


class ConfigError(SavimeError):
    pass


@dataclass(frozen=True)
class Config:
    storage_dir: Path = Path("savime-data")
    temp_dir: Path | None = None
    host: str = "127.0.0.1"
    port: int = DEFAULT_PORT
    max_resident_bytes: int = 4 << 30
    prefault: bool = False
    workers: int = 1
    grain: int = 1 << 16
    debug: bool = False
    log_level: str | None = None
    max_frame_bytes: int = 1 << 30
    export_hook: str | None = None

    @property
    def storage(self) -> StorageConfig:
        temp = self.temp_dir if self.temp_dir is not None else Path(self.storage_dir) / "tmp"
        return StorageConfig(self.storage_dir, temp, self.max_resident_bytes, self.prefault)

    @property
    def catalog_path(self) -> Path:
        return Path(self.storage_dir) / "catalog.json"


_FIELDS = {f.name: f for f in fields(Config)}
ENV_VARS = {"SAVIME_STORAGE_DIR": "storage_dir"}


def _coerce(key: str, value: Any) -> Any:
    if key not in _FIELDS:
        raise ConfigError(f"unknown configuration key {key!r}")
    default = getattr(Config(), key)
    if key in ("storage_dir", "temp_dir"):
        return Path(value)
    if isinstance(default, bool):
        if isinstance(value, str):
            return value.strip().lower() in ("1", "true", "yes", "on")
        return bool(value)
    if isinstance(default, int):
        try:
            return int(value)
        except (TypeError, ValueError):
            raise ConfigError(f"{key} must be an integer, got {value!r}") from None
    return None if value is None else str(value)


def load_config(
    path: str | Path | None = None,
    env: Mapping[str, str] | None = None,
    **overrides: Any,
) -> Config:
    env = os.environ if env is None else env
    values: dict[str, Any] = {}
    path = path or env.get("SAVIME_CONFIG")
    if path:
        try:
            with open(path, "rb") as fh:
                data = tomllib.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config file {path}: {exc}") from exc
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        for key, value in data.items():
            values[key] = _coerce(key, value)
    for var, key in ENV_VARS.items():
        if env.get(var):
            values[key] = _coerce(key, env[var])
    for key, value in overrides.items():
        if value is not None:
            values[key] = _coerce(key, value)
    return replace(Config(), **values)
