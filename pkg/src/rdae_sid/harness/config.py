"""Flat ``key = value`` configuration files.

Plain keys set TrainConfig fields; ``grid.<field> = v1, v2, ...`` declares a
grid axis and ``grid.budget`` caps the number of combinations. ``#`` starts a
comment.
"""

from __future__ import annotations

from dataclasses import replace
from pathlib import Path

from ..errors import ArgumentError
from ..neural.training import TrainConfig
from .grid import DEFAULT_BUDGET, GridSpec


def coerce(name: str, text: str):
    types = TrainConfig.field_types()
    if name not in types:
        raise ArgumentError(f"unknown config key {name!r}")
    kind = types[name]
    text = text.strip()
    try:
        if kind == "bool":
            if text.lower() not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(text)
            return text.lower() in ("true", "1", "yes")
        if kind == "int":
            return int(text)
        if kind == "float":
            return float(text)
        return text
    except ValueError:
        raise ArgumentError(f"bad value {text!r} for {name} ({kind})") from None


def parse_config(text: str) -> tuple[dict, dict, int]:
    """Return (TrainConfig overrides, grid axes, grid budget)."""
    values, axes, budget = {}, {}, DEFAULT_BUDGET
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ArgumentError(f"config line {lineno}: expected key = value")
        key, value = (part.strip() for part in line.split("=", 1))
        if key == "grid.budget":
            budget = int(value)
        elif key.startswith("grid."):
            name = key[5:]
            axes[name] = [coerce(name, v) for v in value.split(",") if v.strip()]
        else:
            values[key] = coerce(key, value)
    return values, axes, budget


def load_config(path: str | Path | None, overrides: dict | None = None) -> tuple[TrainConfig, GridSpec]:
    """Read a config file (optional) and apply CLI overrides on top."""
    values, axes, budget = ({}, {}, DEFAULT_BUDGET)
    if path is not None:
        values, axes, budget = parse_config(Path(path).read_text(encoding="utf-8"))
    values.update({k: v for k, v in (overrides or {}).items() if v is not None})
    return replace(TrainConfig(), **values), GridSpec(axes, budget)
