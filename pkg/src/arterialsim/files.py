"""Sectioned key-value text format used by corridor, scenario and sweep files.

Syntax:
    [kind name]          # section header; name optional
    key = value
    # comment

Parse errors report 1-based line numbers.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .errors import SpecParseError


@dataclass
class Section:
    kind: str
    name: str
    line: int
    fields: dict[str, str] = field(default_factory=dict)
    field_lines: dict[str, int] = field(default_factory=dict)

    def get(self, key, default=None):
        return self.fields.get(key, default)

    def require(self, key):
        if key not in self.fields:
            raise SpecParseError(f"section [{self.kind} {self.name}] missing required key '{key}'", self.line)
        return self.fields[key]

    def get_float(self, key, default=None):
        raw = self.fields.get(key)
        if raw is None:
            if default is None:
                raise SpecParseError(f"section [{self.kind} {self.name}] missing required key '{key}'", self.line)
            return default
        try:
            return float(raw)
        except ValueError:
            raise SpecParseError(f"'{key}' must be a number, got '{raw}'", self.field_lines[key]) from None

    def get_int(self, key, default=None):
        raw = self.fields.get(key)
        if raw is None:
            if default is None:
                raise SpecParseError(f"section [{self.kind} {self.name}] missing required key '{key}'", self.line)
            return default
        try:
            return int(raw)
        except ValueError:
            raise SpecParseError(f"'{key}' must be an integer, got '{raw}'", self.field_lines[key]) from None

    def get_bool(self, key, default=False):
        raw = self.fields.get(key)
        if raw is None:
            return default
        low = raw.strip().lower()
        if low in ("true", "yes", "1"):
            return True
        if low in ("false", "no", "0"):
            return False
        raise SpecParseError(f"'{key}' must be a boolean, got '{raw}'", self.field_lines[key])


def parse_sections(text: str) -> list[Section]:
    sections: list[Section] = []
    current: Section | None = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise SpecParseError("unterminated section header", lineno)
            header = line[1:-1].strip()
            if not header:
                raise SpecParseError("empty section header", lineno)
            parts = header.split(None, 1)
            kind = parts[0]
            name = parts[1].strip() if len(parts) > 1 else ""
            current = Section(kind=kind, name=name, line=lineno)
            sections.append(current)
            continue
        if "=" not in line:
            raise SpecParseError(f"expected 'key = value', got '{line}'", lineno)
        if current is None:
            raise SpecParseError("key-value pair before any section header", lineno)
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise SpecParseError("empty key", lineno)
        if key in current.fields:
            raise SpecParseError(f"duplicate key '{key}' in section [{current.kind} {current.name}]", lineno)
        current.fields[key] = value
        current.field_lines[key] = lineno
    return sections
