"""Line-aware loading of YAML documents (space, run and configuration files).

``load_document`` returns a :class:`Doc` that wraps the parsed data and
remembers the source line of every key, so validation errors can point at
``file:line: field``.
"""
from __future__ import annotations

from pathlib import Path
from typing import Any

import yaml

from .errors import ConfigError


class Doc:
    """A parsed mapping plus the line number of each nested key path."""

    def __init__(self, data: Any, lines: dict[tuple, int], source: str):
        self.data = data
        self.lines = lines
        self.source = source

    def line_of(self, path: tuple) -> int | None:
        while path:
            if path in self.lines:
                return self.lines[path]
            path = path[:-1]
        return self.lines.get((), None)

    def error(self, path: tuple, message: str) -> ConfigError:
        return ConfigError(message, source=self.source, line=self.line_of(path),
                           field=format_path(path) or None)

    def get(self, path: tuple, default: Any = ...) -> Any:
        node = self.data
        for key in path:
            if isinstance(node, dict) and key in node:
                node = node[key]
            elif isinstance(node, list) and isinstance(key, int) and key < len(node):
                node = node[key]
            else:
                if default is ...:
                    raise self.error(path, "required field is missing")
                return default
        return node

    def number(self, path: tuple, default: Any = ..., *, positive: bool = False,
               minimum: float | None = None, maximum: float | None = None,
               integer: bool = False) -> Any:
        value = self.get(path, default)
        if value is default and default is not ...:
            return value
        value = coerce_number(value)
        if value is None or isinstance(value, bool):
            raise self.error(path, f"expected a number, got {self.get(path)!r}")
        if integer:
            if float(value) != int(value):
                raise self.error(path, f"expected an integer, got {value!r}")
            value = int(value)
        if positive and not value > 0:
            raise self.error(path, f"must be positive, got {value!r}")
        if minimum is not None and value < minimum:
            raise self.error(path, f"must be >= {minimum}, got {value!r}")
        if maximum is not None and value > maximum:
            raise self.error(path, f"must be <= {maximum}, got {value!r}")
        return value

    def boolean(self, path: tuple, default: Any = ...) -> Any:
        value = self.get(path, default)
        if value is default and default is not ...:
            return value
        if not isinstance(value, bool):
            raise self.error(path, f"expected true/false, got {value!r}")
        return value


def format_path(path: tuple) -> str:
    out = ""
    for key in path:
        if isinstance(key, int):
            out += f"[{key}]"
        else:
            out += f".{key}" if out else str(key)
    return out


def coerce_number(value: Any) -> float | int | None:
    """Accept ints, floats and numeric strings such as ``1e-4``.

    YAML 1.1 reads ``1e-4`` (no dot) as a string, which users write all the time.
    """
    if isinstance(value, bool):
        return None
    if isinstance(value, (int, float)):
        return value
    if isinstance(value, str):
        try:
            return float(value)
        except ValueError:
            return None
    return None


def _collect_lines(node: yaml.Node, path: tuple, lines: dict[tuple, int]) -> None:
    lines[path] = node.start_mark.line + 1
    if isinstance(node, yaml.MappingNode):
        for key_node, value_node in node.value:
            key = key_node.value
            lines[path + (key,)] = key_node.start_mark.line + 1
            _collect_lines(value_node, path + (key,), lines)
            lines[path + (key,)] = key_node.start_mark.line + 1
    elif isinstance(node, yaml.SequenceNode):
        for i, item in enumerate(node.value):
            _collect_lines(item, path + (i,), lines)


def parse_document(text: str, source: str = "<string>") -> Doc:
    try:
        data = yaml.safe_load(text)
        node = yaml.compose(text, Loader=yaml.SafeLoader)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        line = mark.line + 1 if mark is not None else None
        raise ConfigError(f"malformed document: {getattr(exc, 'problem', exc)}",
                          source=source, line=line) from exc
    if not isinstance(data, dict):
        raise ConfigError("expected a mapping at the top level", source=source, line=1)
    lines: dict[tuple, int] = {}
    _collect_lines(node, (), lines)
    return Doc(data, lines, source)


def load_document(path: str | Path) -> Doc:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError as exc:
        raise ConfigError("file not found", source=str(path)) from exc
    return parse_document(text, source=str(path))


def dump_document(data: Any) -> str:
    return yaml.safe_dump(data, sort_keys=False, default_flow_style=None)
