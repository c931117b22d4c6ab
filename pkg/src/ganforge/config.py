"""Flat ``key=value`` run configuration.

One setting per line, ``#`` starts a comment, blank lines are ignored. Keys
use the underscore form of the command-line flags (``batch_size=80``).
Resolution order is built-in defaults, then the file, then explicit flags.
"""

from __future__ import annotations

import dataclasses
from pathlib import Path
from typing import Any, Optional, Union

from .errors import ConfigError
from .train import TrainConfig

__all__ = ["RUN_DEFAULTS", "RUN_TYPES", "parse_config_text", "read_config_file", "resolve", "format_config"]

RUN_DEFAULTS: dict[str, Any] = {f.name: f.default for f in dataclasses.fields(TrainConfig)}
RUN_DEFAULTS.update({"data": None, "synthetic": None, "synth_size": 64, "out": "ganforge_run", "resume": None})

RUN_TYPES: dict[str, type] = {f.name: type(f.default) for f in dataclasses.fields(TrainConfig)}
RUN_TYPES.update({"data": str, "synthetic": int, "synth_size": int, "out": str, "resume": str})

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def _coerce(key: str, raw: str, where: str) -> Any:
    kind = RUN_TYPES[key]
    try:
        if kind is bool:
            low = raw.lower()
            if low in _TRUE:
                return True
            if low in _FALSE:
                return False
            raise ValueError(raw)
        return kind(raw)
    except ValueError:
        raise ConfigError(f"{where}: invalid {kind.__name__} value {raw!r} for {key}") from None


def parse_config_text(text: str, source: str = "<config>") -> dict[str, Any]:
    values: dict[str, Any] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        where = f"{source}:{lineno}"
        if "=" not in line:
            raise ConfigError(f"{where}: expected key=value, got {line!r}")
        key, raw = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in RUN_TYPES:
            raise ConfigError(f"{where}: unknown setting {key!r}")
        # an empty value means unset, as written by format_config
        values[key] = None if raw == "" else _coerce(key, raw, where)
    return values


def read_config_file(path: Union[str, Path]) -> dict[str, Any]:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise ConfigError(f"cannot read config file {path}: {e}") from e
    return parse_config_text(text, str(path))


def resolve(flags: dict[str, Any], config_file: Optional[Union[str, Path]] = None) -> dict[str, Any]:
    """Defaults < file < flags; None values in the file or flags count as unset."""
    resolved = dict(RUN_DEFAULTS)
    if config_file is not None:
        resolved.update({k: v for k, v in read_config_file(config_file).items() if v is not None})
    resolved.update({k: v for k, v in flags.items() if v is not None and k in RUN_DEFAULTS})
    return resolved


def format_config(values: dict[str, Any]) -> str:
    lines = []
    for key in sorted(values):
        v = values[key]
        if v is None:
            v = ""
        elif isinstance(v, bool):
            v = "true" if v else "false"
        lines.append(f"{key}={v}")
    return "\n".join(lines) + "\n"


def train_config(values: dict[str, Any]) -> TrainConfig:
    return TrainConfig.from_dict(values).validate()
