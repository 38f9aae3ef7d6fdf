"""YAML experiment configs with line-numbered diagnostics."""

from __future__ import annotations

from pathlib import Path

import yaml

from .emitter import ScenarioConfig
from .errors import ParameterError
from .nn.model import ModelConfig


class ConfigError(ParameterError):
    pass


def _key_lines(text: str) -> dict[str, int]:
    try:
        node = yaml.compose(text)
    except yaml.YAMLError:
        return {}
    if not isinstance(node, yaml.MappingNode):
        return {}
    return {k.value: k.start_mark.line + 1 for k, _ in node.value if isinstance(k, yaml.ScalarNode)}


def load_yaml(path) -> tuple[dict, dict[str, int]]:
    """Parse a YAML mapping; returns the data and the line of each top-level key."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"{path}: config file not found")
    text = path.read_text()
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f"{path}:{mark.line + 1}:{mark.column + 1}" if mark else str(path)
        problem = getattr(exc, "problem", None) or str(exc)
        raise ConfigError(f"{where}: {problem}") from exc
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path}:1: top level must be a mapping")
    return data, _key_lines(text)


def _build(cls, data: dict, lines: dict[str, int], path) -> object:
    unknown = sorted(set(data) - set(cls.__dataclass_fields__))
    if unknown:
        k = unknown[0]
        raise ConfigError(f"{path}:{lines.get(k, 1)}: unknown key {k!r}")
    try:
        return cls.from_dict(data)
    except (TypeError, ValueError) as exc:
        line = min((lines[k] for k in data if k in lines and k in str(exc)), default=1)
        raise ConfigError(f"{path}:{line}: {exc}") from exc


def load_scenario(path, overrides: dict | None = None) -> ScenarioConfig:
    data, lines = load_yaml(path)
    data.update(overrides or {})
    return _build(ScenarioConfig, data, lines, path)


def load_model_config(path, overrides: dict | None = None) -> ModelConfig:
    data, lines = load_yaml(path)
    data.update(overrides or {})
    return _build(ModelConfig, data, lines, path)
