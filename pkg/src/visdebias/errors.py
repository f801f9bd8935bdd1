"""Exception hierarchy.

Class names mirror the error identifiers used in messages and records, so a
structured error record carries ``type(exc).__name__`` verbatim.
"""


class DebiasError(Exception):
    """Base class for every error raised by this package."""


class EmptySupport(DebiasError, ValueError):
    pass


class BadParam(DebiasError, ValueError):
    pass


class ShapeMismatch(DebiasError, ValueError):
    pass


class TraceMiss(DebiasError, KeyError):
    def __str__(self) -> str:
        # KeyError.__str__ repr()s its argument; keep the plain message
        return str(self.args[0]) if self.args else ""


class InvalidDegradation(DebiasError, ValueError):
    pass


class VocabMismatch(DebiasError, ValueError):
    pass


class DuplicateRecord(DebiasError, ValueError):
    pass


class TraceFormatError(DebiasError, ValueError):
    """Malformed trace/scenario/prompt file; message carries the line number."""


class BadCandidate(DebiasError, ValueError):
    pass


class NotBinary(DebiasError, ValueError):
    pass


class ConfigError(DebiasError, ValueError):
    """Invalid run configuration (CLI exit status 2)."""


def error_record(exc: BaseException) -> dict:
    return {"type": type(exc).__name__, "message": str(exc)}
