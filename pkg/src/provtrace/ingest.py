"""Trace parsing.

Two line formats carry the same nine fields:

* PipeText (canonical): ``seq|timestamp_ns|pid|tid|pgid|comm|syscall|args|retval``
  where ``args`` is a ``;``-separated ``key=value`` list. Inside a field
  ``\\\\``, ``\\|``, ``\\;``, ``\\n`` and ``\\r`` are the only escapes.
* JsonLines: one object per line with the same keys; ``args`` is a list of
  ``[key, value]`` pairs (an object is accepted on input).

Argument values that are canonical ASCII decimal integers become ``int``;
everything else stays ``str``.
"""

from __future__ import annotations

import io
import json
import re
from dataclasses import asdict, dataclass
from typing import IO, Iterable, Iterator, Literal

try:
    from .errors import DuplicateSeq, MalformedError, OutOfOrderSeq
    from .logger import get_logger
    from .model import MARKER_SYSCALL, Event, is_known_syscall
except ImportError:  # pragma: no cover
    from errors import DuplicateSeq, MalformedError, OutOfOrderSeq  # type: ignore
    from logger import get_logger  # type: ignore
    from model import MARKER_SYSCALL, Event, is_known_syscall  # type: ignore

logger = get_logger("provtrace.ingest")

TraceFormat = Literal["pipe", "jsonl"]
FORMATS = ("pipe", "jsonl")

FIELD_NAMES = ("seq", "timestamp", "pid", "tid", "pgid", "comm", "syscall", "args", "retval")
_INT_FIELDS = (0, 1, 2, 3, 4)

_INT_RE = re.compile(r"-?[0-9]+", re.ASCII)
_CANONICAL_INT_RE = re.compile(r"0|-?[1-9][0-9]*", re.ASCII)
_KEY_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_]*", re.ASCII)

_UNESCAPE = {"\\": "\\", "|": "|", ";": ";", "n": "\n", "r": "\r"}

# Malformed lines are logged individually up to this many per reader.
_LOG_LIMIT = 20


@dataclass(frozen=True, slots=True)
class Skip:
    """A well-formed line whose syscall is outside the tracked set."""

    line_no: int
    syscall: str


@dataclass
class ReaderStats:
    parsed: int = 0
    skipped: int = 0
    malformed: int = 0
    clock_skew: int = 0

    @property
    def total(self) -> int:
        return self.parsed + self.skipped + self.malformed

    def as_dict(self) -> dict:
        data = asdict(self)
        data["total"] = self.total
        return data


# --- field codec ------------------------------------------------------------------


def escape_field(text: str) -> str:
    if not any(c in text for c in "\\|;\n\r"):
        return text
    return (
        text.replace("\\", "\\\\")
        .replace("|", "\\|")
        .replace(";", "\\;")
        .replace("\n", "\\n")
        .replace("\r", "\\r")
    )


def _unescape(text: str) -> str:
    if "\\" not in text:
        return text
    out = []
    i = 0
    while i < len(text):
        c = text[i]
        if c == "\\":
            if i + 1 >= len(text):
                raise ValueError("dangling backslash")
            nxt = text[i + 1]
            if nxt not in _UNESCAPE:
                raise ValueError(f"invalid escape '\\{nxt}'")
            out.append(_UNESCAPE[nxt])
            i += 2
        else:
            out.append(c)
            i += 1
    return "".join(out)


def _split_escaped(text: str, sep: str) -> list[str]:
    """Split on unescaped ``sep``; pieces keep their escapes."""
    if "\\" not in text:
        return text.split(sep)
    pieces = []
    current = []
    i = 0
    while i < len(text):
        c = text[i]
        if c == "\\" and i + 1 < len(text):
            current.append(text[i : i + 2])
            i += 2
            continue
        if c == sep:
            pieces.append("".join(current))
            current = []
        else:
            current.append(c)
        i += 1
    pieces.append("".join(current))
    return pieces


def coerce_value(text: str):
    if not _CANONICAL_INT_RE.fullmatch(text):
        return text
    try:
        return int(text)
    except ValueError:
        # beyond the int() digit limit; keep the text
        return text


def format_value(value) -> str:
    return str(value)


def _parse_args(raw: str) -> tuple:
    if raw == "":
        return ()
    args = []
    for piece in _split_escaped(raw, ";"):
        key, eq, value = piece.partition("=")
        if not eq:
            raise ValueError(f"argument '{piece}' is not key=value")
        if not _KEY_RE.fullmatch(key):
            raise ValueError(f"invalid argument key '{key}'")
        args.append((key, coerce_value(_unescape(value))))
    return tuple(args)


def _format_args(args) -> str:
    return ";".join(f"{key}={escape_field(format_value(value))}" for key, value in args)


# --- line parsing -------------------------------------------------------------------


def parse_line(
    line: str,
    fmt: TraceFormat = "pipe",
    line_no: int = 1,
    *,
    keep_markers: bool = False,
) -> Event | Skip:
    """Parse one record (without its newline). Raises MalformedError."""
    if fmt == "pipe":
        return _parse_pipe(line, line_no, keep_markers)
    if fmt == "jsonl":
        return _parse_json(line, line_no, keep_markers)
    raise ValueError(f"Unknown trace format '{fmt}'. Allowed: {list(FORMATS)}")


def _wanted(syscall: str, keep_markers: bool) -> bool:
    return is_known_syscall(syscall) or (keep_markers and syscall == MARKER_SYSCALL)


def _int_field(text: str, line_no: int, index: int) -> int:
    if not _INT_RE.fullmatch(text):
        raise MalformedError(line_no, index + 1, f"{FIELD_NAMES[index]} is not an integer: {text!r}")
    try:
        return int(text)
    except ValueError as exc:
        # digit-count limit of int()
        raise MalformedError(line_no, index + 1, f"{FIELD_NAMES[index]}: {exc}") from None


def _parse_pipe(line: str, line_no: int, keep_markers: bool) -> Event | Skip:
    fields = _split_escaped(line, "|")
    if len(fields) != 9:
        bad = min(len(fields) + 1, 10)
        raise MalformedError(line_no, bad, f"expected 9 fields, found {len(fields)}")

    ints = [_int_field(fields[index], line_no, index) for index in _INT_FIELDS]
    try:
        comm = _unescape(fields[5])
    except ValueError as exc:
        raise MalformedError(line_no, 6, str(exc)) from None
    try:
        syscall = _unescape(fields[6])
    except ValueError as exc:
        raise MalformedError(line_no, 7, str(exc)) from None
    if not _wanted(syscall, keep_markers):
        return Skip(line_no, syscall)
    try:
        args = _parse_args(fields[7])
    except ValueError as exc:
        raise MalformedError(line_no, 8, str(exc)) from None
    retval = _int_field(fields[8], line_no, 8)

    seq, timestamp, pid, tid, pgid = ints
    return Event(seq, timestamp, pid, tid, pgid, comm, syscall, args, retval)


def _parse_json(line: str, line_no: int, keep_markers: bool) -> Event | Skip:
    try:
        obj = json.loads(line)
    except (ValueError, RecursionError) as exc:
        raise MalformedError(line_no, 0, f"invalid JSON: {exc}") from None
    if not isinstance(obj, dict):
        raise MalformedError(line_no, 0, "record is not a JSON object")

    ints = []
    for index in _INT_FIELDS:
        value = obj.get(FIELD_NAMES[index])
        if not isinstance(value, int) or isinstance(value, bool):
            raise MalformedError(line_no, index + 1, f"{FIELD_NAMES[index]} is not an integer: {value!r}")
        ints.append(value)
    comm = obj.get("comm")
    if not isinstance(comm, str):
        raise MalformedError(line_no, 6, f"comm is not a string: {comm!r}")
    syscall = obj.get("syscall")
    if not isinstance(syscall, str):
        raise MalformedError(line_no, 7, f"syscall is not a string: {syscall!r}")
    if not _wanted(syscall, keep_markers):
        return Skip(line_no, syscall)
    try:
        args = _json_args(obj.get("args", []))
    except ValueError as exc:
        raise MalformedError(line_no, 8, str(exc)) from None
    retval = obj.get("retval")
    if not isinstance(retval, int) or isinstance(retval, bool):
        raise MalformedError(line_no, 9, f"retval is not an integer: {retval!r}")

    seq, timestamp, pid, tid, pgid = ints
    return Event(seq, timestamp, pid, tid, pgid, comm, syscall, args, retval)


def _json_args(raw) -> tuple:
    if isinstance(raw, dict):
        pairs = list(raw.items())
    elif isinstance(raw, list):
        pairs = []
        for item in raw:
            if not isinstance(item, list) or len(item) != 2:
                raise ValueError(f"argument {item!r} is not a [key, value] pair")
            pairs.append((item[0], item[1]))
    else:
        raise ValueError("args must be a list of pairs or an object")
    args = []
    for key, value in pairs:
        if not isinstance(key, str) or not _KEY_RE.fullmatch(key):
            raise ValueError(f"invalid argument key {key!r}")
        if isinstance(value, bool) or not isinstance(value, (int, str)):
            raise ValueError(f"argument '{key}' must be an integer or string")
        args.append((key, coerce_value(value) if isinstance(value, str) else value))
    return tuple(args)


def format_line(event: Event, fmt: TraceFormat = "pipe") -> str:
    """Inverse of ``parse_line``; no trailing newline."""
    if fmt == "pipe":
        return "|".join(
            (
                str(event.seq),
                str(event.timestamp),
                str(event.pid),
                str(event.tid),
                str(event.pgid),
                escape_field(event.comm),
                escape_field(event.syscall),
                _format_args(event.args),
                str(event.retval),
            )
        )
    if fmt == "jsonl":
        return json.dumps(event_to_dict(event), separators=(",", ":"), ensure_ascii=False)
    raise ValueError(f"Unknown trace format '{fmt}'. Allowed: {list(FORMATS)}")


def event_to_dict(event: Event) -> dict:
    return {
        "seq": event.seq,
        "timestamp": event.timestamp,
        "pid": event.pid,
        "tid": event.tid,
        "pgid": event.pgid,
        "comm": event.comm,
        "syscall": event.syscall,
        "args": [[k, v] for k, v in event.args],
        "retval": event.retval,
    }


def event_from_dict(obj: dict) -> Event:
    return Event(
        obj["seq"],
        obj["timestamp"],
        obj["pid"],
        obj["tid"],
        obj["pgid"],
        obj["comm"],
        obj["syscall"],
        tuple((k, v) for k, v in obj["args"]),
        obj["retval"],
    )


# --- streaming reader ----------------------------------------------------------------


class TraceReader:
    """Streams events from a line source.

    ``source`` yields lines as ``bytes`` (binary file, split on ``\\n``) or
    ``str``. Events come out in strictly increasing seq order; duplicate or
    decreasing seqs raise. In non-strict mode malformed lines are counted and
    logged; in strict mode the first one is raised.
    """

    def __init__(
        self,
        source: Iterable[bytes] | Iterable[str],
        fmt: TraceFormat = "pipe",
        *,
        strict: bool = False,
        keep_markers: bool = False,
        name: str = "<trace>",
    ):
        if fmt not in FORMATS:
            raise ValueError(f"Unknown trace format '{fmt}'. Allowed: {list(FORMATS)}")
        self.source = source
        self.format = fmt
        self.strict = strict
        self.keep_markers = keep_markers
        self.name = name
        self.stats = ReaderStats()
        self._last_seq: int | None = None
        self._last_ts: int | None = None

    def __iter__(self) -> Iterator[Event]:
        for line_no, raw in enumerate(self.source, 1):
            try:
                result = self._parse_raw(raw, line_no)
            except MalformedError as exc:
                self.stats.malformed += 1
                if self.strict:
                    raise
                if self.stats.malformed <= _LOG_LIMIT:
                    logger.warning(f"{self.name}: skipping malformed {exc}")
                elif self.stats.malformed == _LOG_LIMIT + 1:
                    logger.warning(f"{self.name}: further malformed lines are counted but not logged")
                continue
            if result is None or isinstance(result, Skip):
                self.stats.skipped += 1
                continue
            self._check_order(result, line_no)
            self.stats.parsed += 1
            yield result
        if self.stats.malformed:
            logger.info(f"{self.name}: {self.stats.malformed} malformed line(s) ignored")

    def _parse_raw(self, raw, line_no: int) -> Event | Skip | None:
        if isinstance(raw, bytes):
            if not raw.endswith(b"\n"):
                raise MalformedError(line_no, 0, "missing trailing newline")
            try:
                line = raw[:-1].decode("utf-8")
            except UnicodeDecodeError as exc:
                raise MalformedError(line_no, 0, f"invalid UTF-8: {exc.reason}") from None
        else:
            if not raw.endswith("\n"):
                raise MalformedError(line_no, 0, "missing trailing newline")
            line = raw[:-1]
        if not line.strip() or line.startswith("#"):
            return None
        return parse_line(line, self.format, line_no, keep_markers=self.keep_markers)

    def _check_order(self, event: Event, line_no: int):
        if self._last_seq is not None:
            if event.seq == self._last_seq:
                raise DuplicateSeq(event.seq, line_no)
            if event.seq < self._last_seq:
                raise OutOfOrderSeq(self._last_seq, event.seq, line_no)
        if self._last_ts is not None and event.timestamp < self._last_ts:
            self.stats.clock_skew += 1
            logger.debug(f"{self.name}: line {line_no}: timestamp goes backwards at seq {event.seq}")
        self._last_seq = event.seq
        self._last_ts = event.timestamp


def read_trace(
    source: IO[bytes] | Iterable[bytes] | Iterable[str],
    fmt: TraceFormat = "pipe",
    *,
    strict: bool = False,
    keep_markers: bool = False,
    name: str = "<trace>",
) -> TraceReader:
    return TraceReader(source, fmt, strict=strict, keep_markers=keep_markers, name=name)


def read_trace_text(text: str, fmt: TraceFormat = "pipe", **kwargs) -> tuple[list[Event], ReaderStats]:
    """Parse a whole in-memory trace. Convenience for tests and the simulator."""
    reader = read_trace(io.BytesIO(text.encode("utf-8")), fmt, **kwargs)
    events = list(reader)
    return events, reader.stats


def format_trace(events: Iterable[Event], fmt: TraceFormat = "pipe") -> str:
    return "".join(format_line(e, fmt) + "\n" for e in events)
