"""JSON (de)serialisation of the nested config dataclasses with validation."""

from __future__ import annotations

import dataclasses
import json
import types
import typing
from pathlib import Path

from .errors import ConfigError
from .losses import LossWeights
from .model import ModelConfig
from .proxy import ProxyConfig
from .trainer import ProviderConfig, TrainConfig

SECTIONS = (LossWeights, ModelConfig, ProxyConfig, ProviderConfig, TrainConfig)


def _hints(cls) -> dict:
    return typing.get_type_hints(cls)


def to_dict(cfg) -> dict:
    out = {}
    for f in dataclasses.fields(cfg):
        v = getattr(cfg, f.name)
        if dataclasses.is_dataclass(v):
            v = to_dict(v)
        elif isinstance(v, tuple):
            v = [list(row) if isinstance(row, tuple) else row for row in v]
        out[f.name] = v
    return out


def _check_scalar(path: str, value, tp):
    origin = typing.get_origin(tp)
    if origin in (typing.Union, types.UnionType):
        args = typing.get_args(tp)
        if value is None and type(None) in args:
            return None
        errors = []
        for a in args:
            if a is type(None):
                continue
            try:
                return _check_scalar(path, value, a)
            except ConfigError as exc:
                errors.append(str(exc))
        raise ConfigError(errors[0] if errors else f"{path}: invalid value {value!r}")
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected bool, got {value!r}")
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{path}: expected int, got {value!r}")
        return value
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: expected number, got {value!r}")
        return float(value)
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError(f"{path}: expected string, got {value!r}")
        return value
    if tp is tuple:
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{path}: expected a list, got {value!r}")
        return tuple(tuple(r) if isinstance(r, (list, tuple)) else r for r in value)
    raise ConfigError(f"{path}: unsupported field type {tp}")


def from_dict(cls, data: dict, path: str = ""):
    if not isinstance(data, dict):
        raise ConfigError(f"{path or cls.__name__}: expected an object")
    hints = _hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(sorted(path + k for k in unknown))}")
    kwargs = {}
    for name, value in data.items():
        tp = hints[name]
        if dataclasses.is_dataclass(tp):
            kwargs[name] = from_dict(tp, value, f"{path}{name}.")
        else:
            kwargs[name] = _check_scalar(path + name, value, tp)
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def parse_override(text: str) -> tuple[list[str], object]:
    if "=" not in text:
        raise ConfigError(f"override must look like key=value, got {text!r}")
    key, raw = text.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.strip().split("."), value


def apply_overrides(data: dict, overrides, cls=TrainConfig) -> dict:
    """Set dotted ``key=value`` pairs on a config dict, checking every key exists."""
    data = json.loads(json.dumps(data))
    for text in overrides or ():
        keys, value = parse_override(text)
        node, node_cls = data, cls
        for i, k in enumerate(keys):
            fields = {f.name: f for f in dataclasses.fields(node_cls)}
            if k not in fields:
                raise ConfigError(f"unknown config key: {'.'.join(keys[: i + 1])}")
            tp = _hints(node_cls)[k]
            if i == len(keys) - 1:
                if dataclasses.is_dataclass(tp):
                    raise ConfigError(f"{'.'.join(keys)} is a section; set one of its keys")
                node[k] = value
            else:
                if not dataclasses.is_dataclass(tp):
                    raise ConfigError(f"{'.'.join(keys[: i + 1])} is not a section")
                node = node.setdefault(k, {})
                node_cls = tp
    return data


def load_config(path=None, overrides=None) -> TrainConfig:
    data = {}
    if path is not None:
        try:
            data = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
    data = apply_overrides(data, overrides)
    return from_dict(TrainConfig, data)


def dump_config(cfg, path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(to_dict(cfg), indent=2) + "\n")
    return path


def describe_schema(cls=TrainConfig, prefix: str = "") -> list[str]:
    """One ``key (type, default)`` line per leaf config key."""
    lines = []
    default = cls()
    hints = _hints(cls)
    for f in dataclasses.fields(cls):
        tp = hints[f.name]
        if dataclasses.is_dataclass(tp):
            lines += describe_schema(tp, f"{prefix}{f.name}.")
            continue
        value = getattr(default, f.name)
        if isinstance(value, tuple):
            value = "8x8 table"
        name = getattr(tp, "__name__", str(tp).replace("typing.", ""))
        lines.append(f"  {prefix}{f.name} ({name}, default {value!r})")
    return lines
