"""Exception types shared across the audit pipeline."""

from __future__ import annotations


class AuditError(Exception):
    """Base class for all tool-specific errors."""


class RootNotFound(AuditError):
    """The crate root path does not exist or is not a directory."""


class NoSourceFiles(AuditError):
    """The crate root contains no .rs files."""


class SchemaViolation(AuditError):
    """A facts document does not match the interchange schema.

    ``path`` is a JSON-pointer-style location into the offending document.
    """

    def __init__(self, path: str, message: str = "") -> None:
        self.path = path
        detail = f"schema violation at {path}"
        if message:
            detail += f": {message}"
        super().__init__(detail)


class VersionMismatch(AuditError):
    """A facts document declares an unsupported facts_version."""


class UnsupportedFormat(AuditError):
    """An unknown report format was requested."""


class InvalidCombination(AuditError):
    """An audit-unit skeleton has categories that no pattern admits.

    Signals an extractor bug, not a property of the analyzed crate.
    """


class PreconditionUnmet(AuditError):
    """An operation was invoked on inputs outside its stated precondition."""
