from __future__ import annotations

from typing import Any


class CqswError(Exception):
    """Root of every error the workbench raises on purpose."""


class ValidationFailure(CqswError, ValueError):
    def __init__(self, message: str, *, field_path: str | None = None) -> None:
        self.message = message
        self.field_path = field_path
        text = f"{field_path}: {message}" if field_path else message
        super().__init__(text)


class EnsembleFormatError(ValidationFailure):
    pass


class ResourceCapExceeded(CqswError, RuntimeError):
    def __init__(self, message: str, *, requested: int, cap: int, advisory: str | None = None) -> None:
        self.requested = int(requested)
        self.cap = int(cap)
        self.advisory = advisory
        text = f"{message} (requested {requested}, cap {cap})"
        if advisory:
            text = f"{text}; {advisory}"
        super().__init__(text)


class ConstructionFailure(CqswError, RuntimeError):
    def __init__(self, message: str, *, offending_error: float | None = None) -> None:
        self.offending_error = offending_error
        super().__init__(message)


class CoverIncomplete(ConstructionFailure):
    def __init__(self, message: str, *, partial: Any, offending_error: float | None = None) -> None:
        # partial is the CqswCode built before the constructor gave up
        self.partial = partial
        super().__init__(message, offending_error=offending_error)


class AssertionFailure(CqswError, AssertionError):
    def __init__(self, message: str, *, failed: list[str] | None = None) -> None:
        self.failed = list(failed or [])
        super().__init__(message)
