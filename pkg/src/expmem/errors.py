"""Shared exception types.

The CLI maps these onto stable exit codes: ConfigError -> 2,
ProviderError -> 3, StorageError -> 4.
"""

from __future__ import annotations


class ExpmemError(Exception):
    """Base class for all package errors."""


class AlternationError(ExpmemError):
    """An interaction history would break observation/action alternation."""


class HorizonExceededError(ExpmemError):
    """Appending an action would exceed the task's step horizon."""


class EmptyTextError(ExpmemError):
    """Text input was empty after whitespace trimming."""


class DimensionMismatchError(ExpmemError):
    """Two vectors of different dimension were combined."""


class ZeroVectorError(ExpmemError):
    """A zero vector reached an operation that requires a direction."""


class ProviderError(ExpmemError):
    """A remote or scripted provider failed to produce a usable reply."""


class StorageError(ExpmemError):
    """A persistence operation failed (unreadable, unwritable, corrupt)."""


class MalformedRecordError(StorageError):
    """A persisted file contains a record that cannot be decoded.

    ``line_number`` is 1-based and refers to the offending line of the file.
    """

    def __init__(self, message: str, line_number: int | None = None):
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)
        self.line_number = line_number


class ConfigError(ExpmemError):
    """A configuration value is missing or invalid.

    ``field`` names the offending configuration key when known.
    """

    def __init__(self, message: str, field: str | None = None):
        if field is not None:
            message = f"{field}: {message}"
        super().__init__(message)
        self.field = field
