"""Exception hierarchy.

Every error a user can cause derives from ``ProvtraceError``; the CLI maps
those to exit code 1. ``InvariantViolation`` marks an internal bug (exit 2).
"""

from __future__ import annotations


class ProvtraceError(Exception):
    """Base class for user-facing errors."""


class InvariantViolation(Exception):
    """An internal consistency check failed."""


class UnrecognizedSyscall(ProvtraceError, ValueError):
    def __init__(self, name: str):
        super().__init__(f"Unrecognized syscall '{name}'")
        self.name = name


class MalformedError(ProvtraceError, ValueError):
    """A trace line could not be parsed.

    ``field`` is the 1-based position of the first offending field, or 0 when
    the line as a whole is unusable (encoding, missing terminator).
    """

    def __init__(self, line_no: int, field: int, reason: str):
        super().__init__(f"line {line_no}: field {field}: {reason}")
        self.line_no = line_no
        self.field = field
        self.reason = reason


class DuplicateSeq(ProvtraceError):
    def __init__(self, seq: int, line_no: int | None = None):
        where = f" (line {line_no})" if line_no is not None else ""
        super().__init__(f"Duplicate seq {seq}{where}")
        self.seq = seq
        self.line_no = line_no


class OutOfOrderSeq(ProvtraceError):
    def __init__(self, previous: int, current: int, line_no: int | None = None):
        where = f" (line {line_no})" if line_no is not None else ""
        super().__init__(f"Out-of-order seq: {current} after {previous}{where}")
        self.previous = previous
        self.current = current
        self.line_no = line_no


class InsufficientTraces(ProvtraceError, ValueError):
    def __init__(self, count: int):
        super().__init__(f"Signature mining needs at least 2 traces, got {count}")
        self.count = count


class CorpusError(ProvtraceError):
    pass


class SignatureError(ProvtraceError, ValueError):
    pass


class ProfileError(ProvtraceError, ValueError):
    pass


class ProfileConflict(ProvtraceError):
    def __init__(self, pgid: int, first: str, second: str):
        super().__init__(
            f"Process group {pgid} matches profile '{first}' and profile '{second}'"
        )
        self.pgid = pgid
        self.first = first
        self.second = second


class EntitySpecError(ProvtraceError, ValueError):
    pass


class InvalidSeed(ProvtraceError, ValueError):
    pass


class DumpFormatError(ProvtraceError, ValueError):
    pass


class ConfigError(ProvtraceError):
    pass
