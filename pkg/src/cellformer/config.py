"""Flat key=value configuration files with typed parsing.

Types come from the target dataclasses' annotations; unknown keys are
rejected with the offending source named. Command-line flags reuse the same
coercion, so precedence is simply: flag > config file > dataclass default.
"""

from __future__ import annotations

import dataclasses
import typing
from pathlib import Path


class ConfigError(Exception):
    pass


_BOOLS = {"true": True, "yes": True, "1": True, "on": True,
          "false": False, "no": False, "0": False, "off": False}


def parse_kv_file(path) -> dict[str, str]:
    """key=value lines; blank lines and '#' comments allowed."""
    settings: dict[str, str] = {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"cannot read config file {path}: {e}") from None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value, got {line!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        if not key:
            raise ConfigError(f"{path}:{lineno}: empty key")
        if key in settings:
            raise ConfigError(f"{path}:{lineno}: duplicate key '{key}'")
        settings[key] = value.strip()
    return settings


def _coerce(raw: str, typ, key: str, source: str):
    origin = typing.get_origin(typ)
    if origin in (tuple, list):
        parts = tuple(p.strip() for p in raw.split(",") if p.strip())
        return parts if origin is tuple else list(parts)
    if typ is bool:
        if raw.lower() not in _BOOLS:
            raise ConfigError(f"{source}: key '{key}': expected a boolean, got {raw!r}")
        return _BOOLS[raw.lower()]
    if typ is int:
        try:
            return int(raw)
        except ValueError:
            raise ConfigError(f"{source}: key '{key}': expected an integer, got {raw!r}") from None
    if typ is float:
        try:
            return float(raw)
        except ValueError:
            raise ConfigError(f"{source}: key '{key}': expected a number, got {raw!r}") from None
    return raw


def apply_settings(instances: list, settings: dict[str, str], source: str,
                   reject: dict[str, str] | None = None) -> list:
    """Route string settings onto one or more dataclass instances.

    A key may match fields on several instances (they all get it). Unknown
    keys, and keys listed in `reject`, raise ConfigError naming the source.
    """
    field_types = []
    for inst in instances:
        hints = typing.get_type_hints(type(inst))
        field_types.append({f.name: hints[f.name]
                            for f in dataclasses.fields(inst)})

    updates: list[dict] = [{} for _ in instances]
    for key, raw in settings.items():
        if reject and key in reject:
            raise ConfigError(f"{source}: key '{key}': {reject[key]}")
        matched = False
        for i, types in enumerate(field_types):
            if key in types:
                updates[i][key] = _coerce(raw, types[key], key, source)
                matched = True
        if not matched:
            raise ConfigError(f"{source}: unknown config key '{key}'")

    out = []
    for inst, up in zip(instances, updates):
        try:
            out.append(dataclasses.replace(inst, **up) if up else inst)
        except ValueError as e:
            raise ConfigError(f"{source}: {e}") from None
    return out


def config_lines(sections: dict[str, object]) -> list[str]:
    """Deterministic key=value echo of resolved configs, one section per
    dataclass."""
    lines = []
    for title in sections:
        inst = sections[title]
        lines.append(f"[{title}]")
        for f in sorted(dataclasses.fields(inst), key=lambda f: f.name):
            value = getattr(inst, f.name)
            if isinstance(value, (tuple, list)):
                value = ",".join(str(v) for v in value)
            lines.append(f"{f.name}={value}")
    return lines
