"""Utility helpers shared across agewatch components."""

from __future__ import annotations

import math
from typing import Any, Iterable, Mapping, Sequence

from .errors import ConfigError


def format_duration(seconds: float) -> str:
    """Convert seconds to an ``HH:MM:SS.mmm`` clock reading."""

    milliseconds_total = int(round(seconds * 1000))
    hours, remainder = divmod(milliseconds_total, 3_600_000)
    minutes, remainder = divmod(remainder, 60_000)
    seconds_whole, milliseconds = divmod(remainder, 1000)
    return f"{hours:02}:{minutes:02}:{seconds_whole:02}.{milliseconds:03}"


def format_number(value: float | None, digits: int = 3) -> str:
    if value is None:
        return "none"
    if math.isinf(value):
        return "+inf" if value > 0 else "-inf"
    if math.isnan(value):
        return "nan"
    return f"{value:.{digits}f}"


def format_percent(value: float | None) -> str:
    if value is None or math.isnan(value):
        return "n/a"
    if math.isinf(value):
        return "+inf" if value > 0 else "-inf"
    return f"{value:+.0f}%"


def markdown_table(headers: Sequence[str], rows: Iterable[Sequence[Any]]) -> str:
    """Render rows as a GitHub-flavoured Markdown table."""

    lines = [
        "| " + " | ".join(str(header) for header in headers) + " |",
        "|" + "|".join("---" for _ in headers) + "|",
    ]
    for row in rows:
        lines.append("| " + " | ".join(str(cell) for cell in row) + " |")
    return "\n".join(lines) + "\n"


def check_keys(data: Mapping[str, Any], allowed: Iterable[str], section: str) -> None:
    if not isinstance(data, Mapping):
        raise ConfigError(f"[{section}] must be a table")
    unknown = set(data) - set(allowed)
    if unknown:
        raise ConfigError(f"unknown keys in [{section}]: {', '.join(sorted(unknown))}")


__all__ = ["check_keys", "format_duration", "format_number", "format_percent", "markdown_table"]
