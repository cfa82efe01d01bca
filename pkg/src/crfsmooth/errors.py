"""Exception types shared across the package."""

from __future__ import annotations


class ValidationError(ValueError):
    """Bad input: malformed file, violated invariant, inconsistent config."""


class DatasetFormatError(ValidationError):
    """Malformed dataset file; carries the offending file and line."""

    def __init__(self, message: str, path: str | None = None, line: int | None = None):
        loc = ""
        if path is not None:
            loc = f" [{path}" + (f":{line}" if line is not None else "") + "]"
        super().__init__(message + loc)
        self.path = path
        self.line = line
