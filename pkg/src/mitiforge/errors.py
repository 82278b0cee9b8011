"""Exception hierarchy shared across the package."""
from __future__ import annotations


class MitiforgeError(Exception):
    """Base class for all package errors."""


class ConfigError(MitiforgeError):
    pass


class MalformedFeed(MitiforgeError):
    def __init__(self, message: str, offset: int | None = None) -> None:
        super().__init__(message if offset is None else f"{message} (byte offset {offset})")
        self.offset = offset


class UnsupportedFormat(MitiforgeError):
    pass


class NetworkError(MitiforgeError):
    pass


class CacheMiss(MitiforgeError):
    pass


class HttpStatusError(MitiforgeError):
    def __init__(self, code: int, url: str = "") -> None:
        super().__init__(f"HTTP {code} for {url}" if url else f"HTTP {code}")
        self.code = code


class EmptyText(MitiforgeError):
    pass


class BackendUnavailable(MitiforgeError):
    pass


class DimensionMismatch(MitiforgeError):
    pass


class MalformedReply(MitiforgeError):
    pass


class UnclassifiedType(MitiforgeError):
    pass


class InfoKindMismatch(MitiforgeError):
    pass


class ParseError(MitiforgeError):
    def __init__(self, message: str, line: int, col: int) -> None:
        super().__init__(f"{message} at line {line}, col {col}")
        self.line = line
        self.col = col


class NoCallSite(MitiforgeError):
    pass


class PromptTooLong(MitiforgeError):
    pass


class UnparseableReply(MitiforgeError):
    pass


class HarnessError(MitiforgeError):
    pass


class PipelineError(MitiforgeError):
    """Wraps a stage failure so callers can map it to an exit code."""

    def __init__(self, stage: str, cause: Exception) -> None:
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause
