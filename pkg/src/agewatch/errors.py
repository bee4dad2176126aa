"""Exception hierarchy shared by every agewatch component."""

from __future__ import annotations

from pathlib import Path
from typing import Optional


class AgewatchError(Exception):
    """Base class for all agewatch failures."""


class InputError(AgewatchError):
    """Bad user-supplied input: files, configs, series. The CLI maps it to exit code 2."""


class ParseError(InputError):
    def __init__(
        self,
        reason: str,
        *,
        path: Optional[Path | str] = None,
        line: Optional[int] = None,
    ) -> None:
        self.reason = reason
        self.path = Path(path) if path is not None else None
        self.line = line
        location = ""
        if self.path is not None:
            location = f"{self.path}:{line}: " if line is not None else f"{self.path}: "
        super().__init__(f"{location}{reason}")


class DanglingReference(ParseError):
    pass


class DuplicateId(ParseError):
    pass


class NonMonotonicTimestamps(InputError):
    pass


class SeriesTooShort(InputError):
    pass


class TooFewSamples(InputError):
    pass


class IndicatorFormatError(ParseError):
    pass


class ConfigError(InputError):
    pass


class MissingActivity(InputError):
    pass


class MissingBaseline(InputError):
    pass


class UnreachableObject(AgewatchError):
    pass


class NotRejuvenable(AgewatchError):
    pass


class InvariantViolation(AgewatchError):
    """An internal consistency check failed. The CLI maps it to exit code 3."""


__all__ = [
    "AgewatchError",
    "ConfigError",
    "DanglingReference",
    "DuplicateId",
    "IndicatorFormatError",
    "InputError",
    "InvariantViolation",
    "MissingActivity",
    "MissingBaseline",
    "NonMonotonicTimestamps",
    "NotRejuvenable",
    "ParseError",
    "SeriesTooShort",
    "TooFewSamples",
    "UnreachableObject",
]
