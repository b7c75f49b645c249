"""
Exception hierarchy. Every error carries the CLI exit code it maps to:

    0 success, 1 usage/config error, 2 data error, 3 numerical failure
"""

from __future__ import annotations

from typing import Optional


class R2slError(Exception):
    exit_code = 1


class UsageError(R2slError):
    exit_code = 1


class ConfigError(UsageError, ValueError):
    """Invalid configuration value or unknown configuration key."""


class DataError(R2slError, ValueError):
    """Malformed or inconsistent input data, optionally located in a file."""

    exit_code = 2

    def __init__(
        self, message: str, *, path: Optional[str] = None, line: Optional[int] = None
    ) -> None:
        self.message = message
        self.path = path
        self.line = line
        super().__init__(self._render())

    def _render(self) -> str:
        if self.path is None:
            return self.message
        if self.line is None:
            return f"{self.path}: {self.message}"
        return f"{self.path}:{self.line}: {self.message}"


class NumericalError(R2slError, ArithmeticError):
    """Collapsed mixture, non-finite gradient or non-finite loss."""

    exit_code = 3
