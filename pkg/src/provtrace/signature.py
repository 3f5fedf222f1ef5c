"""Unit boundary signatures: gap-tolerant online matching and mining.

A signature is an ordered list of syscall patterns. ``match_step`` feeds one
event to a cursor; unrelated events between steps are gaps and never reset
the cursor unless a gap budget is set.

``mine_signature`` extracts the longest common subsequence of repeated
activity traces. Two traces are aligned with a dynamic-programming table that
maximizes (length, agreeing arguments); more traces are folded in pairwise.
Arguments become the strongest constraint that holds in every trace:
exact value, same value as an earlier step, same descriptor class, or any.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable, Mapping, Sequence

try:
    from .errors import CorpusError, InsufficientTraces, InvariantViolation, SignatureError
    from .graph import build_graph
    from .ingest import TraceFormat, read_trace
    from .logger import get_logger
    from .model import (
        CONSTRAINT_KINDS,
        DESCRIPTOR_CLASSES,
        MARKER_SYSCALL,
        ArgConstraint,
        Event,
        NoSignature,
        Signature,
        SignatureKind,
        SignaturePattern,
        UnitKey,
    )
except ImportError:  # pragma: no cover
    from errors import CorpusError, InsufficientTraces, InvariantViolation, SignatureError  # type: ignore
    from graph import build_graph  # type: ignore
    from ingest import TraceFormat, read_trace  # type: ignore
    from logger import get_logger  # type: ignore
    from model import (  # type: ignore
        CONSTRAINT_KINDS,
        DESCRIPTOR_CLASSES,
        MARKER_SYSCALL,
        ArgConstraint,
        Event,
        NoSignature,
        Signature,
        SignatureKind,
        SignaturePattern,
        UnitKey,
    )

logger = get_logger("provtrace.signature")

DescriptorLookup = Callable[[int], "str | None"]

DEFAULT_MIN_LENGTH = 3

_FD_KEYS = ("fd", "fd0", "fd1")


class MatchResult(str, Enum):
    ADVANCE = "Advance"
    COMPLETE = "Complete"
    NO_MATCH = "NoMatch"


@dataclass
class MatchCursor:
    position: int = 0
    bindings: list[Event] = field(default_factory=list)
    gaps: int = 0
    # events of the most recent complete match
    last_match: tuple[Event, ...] = ()

    def reset(self):
        self.position = 0
        self.bindings = []
        self.gaps = 0

    def copy(self) -> "MatchCursor":
        return MatchCursor(self.position, list(self.bindings), self.gaps, self.last_match)


def constraint_holds(
    constraint: ArgConstraint,
    event: Event,
    bindings: Sequence[Event],
    dclass_of: DescriptorLookup | None = None,
) -> bool:
    kind = constraint.kind
    if kind == "any":
        return True
    value = event.value(constraint.key)
    if kind == "exact":
        return value is not None and value == constraint.value
    if kind == "same-as-step":
        if constraint.ref_step >= len(bindings):
            return False
        ref = bindings[constraint.ref_step].value(constraint.ref_key or constraint.key)
        return value is not None and value == ref
    if kind == "path-prefix":
        return isinstance(value, str) and value.startswith(constraint.value)
    # descriptor-class; unknown without descriptor information
    if dclass_of is None:
        return True
    return dclass_of(event.seq) == constraint.value


def pattern_matches(
    pattern: SignaturePattern,
    event: Event,
    bindings: Sequence[Event] = (),
    dclass_of: DescriptorLookup | None = None,
) -> bool:
    if event.syscall != pattern.syscall:
        return False
    return all(constraint_holds(c, event, bindings, dclass_of) for c in pattern.constraints)


def match_step(
    cursor: MatchCursor,
    event: Event,
    sig: Signature,
    *,
    gap_budget: int | None = None,
    dclass_of: DescriptorLookup | None = None,
) -> MatchResult:
    step = sig.steps[cursor.position]
    if pattern_matches(step, event, cursor.bindings, dclass_of):
        cursor.bindings.append(event)
        cursor.position += 1
        cursor.gaps = 0
        if cursor.position == len(sig.steps):
            cursor.last_match = tuple(cursor.bindings)
            cursor.reset()
            return MatchResult.COMPLETE
        return MatchResult.ADVANCE
    if cursor.position > 0 and gap_budget is not None:
        cursor.gaps += 1
        if cursor.gaps > gap_budget:
            cursor.reset()
            return match_step(cursor, event, sig, gap_budget=gap_budget, dclass_of=dclass_of)
    return MatchResult.NO_MATCH


def unit_key_value(sig: Signature, match: Sequence[Event]) -> str | None:
    if sig.key is None or sig.key.step >= len(match):
        return None
    value = match[sig.key.step].value(sig.key.arg)
    if value is None:
        return None
    return f"{sig.key.arg}={value}"


def matches_trace(
    sig: Signature,
    trace: Sequence[Event],
    dclass_of: DescriptorLookup | None = None,
    gap_budget: int | None = None,
) -> bool:
    cursor = MatchCursor()
    for event in trace:
        if match_step(cursor, event, sig, gap_budget=gap_budget, dclass_of=dclass_of) is MatchResult.COMPLETE:
            return True
    return False


# --- mining -------------------------------------------------------------------------


@dataclass
class InferenceCorpus:
    activity_label: str
    traces: list[tuple[Event, ...]]
    max_len: int | None = None
    # per trace: seq -> descriptor class
    descriptor_classes: list[Mapping[int, str]] = field(default_factory=list)

    @property
    def M(self) -> int:
        return len(self.traces)

    @property
    def N(self) -> int | None:
        return self.max_len

    def truncated(self) -> list[tuple[Event, ...]]:
        if self.max_len is None:
            return list(self.traces)
        return [trace[: self.max_len] for trace in self.traces]

    def dclass_lookup(self, index: int) -> DescriptorLookup | None:
        if index >= len(self.descriptor_classes):
            return None
        return self.descriptor_classes[index].get


_Column = tuple  # one aligned event per folded trace


def _agreement(column: _Column, event: Event) -> int:
    count = 0
    for key, value in column[0].args:
        if event.arg(key) == value and all(e.arg(key) == value for e in column[1:]):
            count += 1
    return count


def _align(columns: list[_Column], trace: Sequence[Event]) -> list[tuple[int, int]]:
    n, m = len(columns), len(trace)
    # best[i][j]: best (length, agreeing args) over columns[i:] and trace[j:]
    best = [[(0, 0)] * (m + 1) for _ in range(n + 1)]
    agree: dict[tuple[int, int], int] = {}
    for i in range(n - 1, -1, -1):
        row, below = best[i], best[i + 1]
        name = columns[i][0].syscall
        for j in range(m - 1, -1, -1):
            cand = below[j] if below[j] >= row[j + 1] else row[j + 1]
            if trace[j].syscall == name:
                score = _agreement(columns[i], trace[j])
                agree[i, j] = score
                length, exact = below[j + 1]
                take = (length + 1, exact + score)
                if take > cand:
                    cand = take
            row[j] = cand

    pairs = []
    i = j = 0
    while i < n and j < m:
        current = best[i][j]
        if current[0] == 0:
            break
        if (i, j) in agree:
            length, exact = best[i + 1][j + 1]
            if (length + 1, exact + agree[i, j]) == current:
                pairs.append((i, j))
                i += 1
                j += 1
                continue
        if best[i][j + 1] == current:
            j += 1
        else:
            i += 1
    return pairs


def common_subsequence(traces: Sequence[Sequence[Event]]) -> list[_Column]:
    """Fold traces through pairwise alignment; each column holds one event per trace."""
    columns: list[_Column] = [(event,) for event in traces[0]]
    for trace in traces[1:]:
        if not columns:
            break
        columns = [columns[i] + (trace[j],) for i, j in _align(columns, trace)]
    return columns


def _same_as(columns: list[_Column], index: int, key: str) -> tuple[int, str] | None:
    column = columns[index]
    for k in range(index - 1, -1, -1):
        for ref_key in (key, "retval"):
            earlier = columns[k]
            if all(
                column[t].arg(key) is not None and column[t].arg(key) == earlier[t].value(ref_key)
                for t in range(len(column))
            ):
                return k, ref_key
    return None


def _common_class(column: _Column, lookups: list[DescriptorLookup | None]) -> str | None:
    classes = set()
    for t, event in enumerate(column):
        lookup = lookups[t] if t < len(lookups) else None
        cls = lookup(event.seq) if lookup is not None else None
        if cls is None:
            return None
        classes.add(cls)
    if len(classes) == 1:
        cls = classes.pop()
        return cls if cls in DESCRIPTOR_CLASSES else None
    return None


def _patterns(
    columns: list[_Column],
    lookups: list[DescriptorLookup | None],
    allow_step_refs: bool,
) -> tuple[SignaturePattern, ...]:
    patterns = []
    for index, column in enumerate(columns):
        first = column[0]
        constraints = []
        for key, value in first.args:
            values = [e.arg(key) for e in column]
            if all(v == value for v in values):
                constraints.append(ArgConstraint(key, "exact", value))
                continue
            if any(v is None for v in values):
                continue
            ref = _same_as(columns, index, key) if allow_step_refs else None
            if ref is not None:
                constraints.append(ArgConstraint(key, "same-as-step", ref_step=ref[0], ref_key=ref[1]))
                continue
            if key in _FD_KEYS:
                cls = _common_class(column, lookups)
                if cls is not None:
                    constraints.append(ArgConstraint(key, "descriptor-class", cls))
        patterns.append(SignaturePattern(first.syscall, tuple(constraints)))
    return tuple(patterns)


def mine_signature(
    corpus: InferenceCorpus,
    *,
    min_len: int = DEFAULT_MIN_LENGTH,
    kind: SignatureKind = "UnitStart",
    app: str = "",
    key: UnitKey | None = None,
) -> Signature | NoSignature:
    if corpus.M < 2:
        raise InsufficientTraces(corpus.M)
    if min_len < 1:
        raise ValueError(f"min_len must be at least 1, got {min_len}")

    traces = corpus.truncated()
    lookups = [corpus.dclass_lookup(t) for t in range(len(traces))]
    columns = common_subsequence(traces)
    if len(columns) < min_len:
        reason = (
            f"longest common subsequence has {len(columns)} step(s), fewer than {min_len}: "
            "application not suitable for partitioning"
        )
        logger.info(f"{corpus.activity_label}: {reason}")
        return NoSignature(reason, len(columns))

    for allow_step_refs in (True, False):
        steps = _patterns(columns, lookups, allow_step_refs)
        try:
            sig = Signature(steps, kind, app, key)
        except SignatureError:
            if key is not None and key.step >= len(steps):
                raise SignatureError(f"Unit key step {key.step} is outside the mined {len(steps)}-step signature")
            raise
        if all(matches_trace(sig, trace, lookups[t]) for t, trace in enumerate(traces)):
            return sig
        logger.debug(f"{corpus.activity_label}: weakening step references after failed replay")
    raise InvariantViolation("Mined signature does not match its own corpus")


# --- corpus loading ------------------------------------------------------------------


def split_traces(events: Sequence[Event], max_len: int | None = None) -> list[tuple[Event, ...]]:
    """Cut an event stream at boundary markers, following each marker's process group."""
    traces: list[list[Event]] = []
    current: list[Event] | None = None
    pgid = None
    for event in events:
        if event.syscall == MARKER_SYSCALL:
            current = []
            traces.append(current)
            pgid = event.pgid
            continue
        if current is not None and event.pgid == pgid:
            current.append(event)
    if max_len is not None:
        return [tuple(trace[:max_len]) for trace in traces]
    return [tuple(trace) for trace in traces]


def load_corpus(
    directory: str | Path,
    fmt: TraceFormat = "pipe",
    *,
    max_len: int | None = None,
    label: str | None = None,
    strict: bool = False,
) -> InferenceCorpus:
    root = Path(directory)
    if not root.is_dir():
        raise CorpusError(f"Corpus directory not found: {root}")
    paths = sorted(p for p in root.iterdir() if p.is_file() and not p.name.startswith("."))
    if not paths:
        raise CorpusError(f"Corpus directory {root} contains no trace files")

    traces: list[tuple[Event, ...]] = []
    classes: list[Mapping[int, str]] = []
    for path in paths:
        with path.open("rb") as fh:
            events = list(read_trace(fh, fmt, strict=strict, keep_markers=True, name=str(path)))
        dclasses = build_graph(events).descriptor_classes
        found = split_traces(events, max_len)
        if not found:
            logger.warning(f"{path}: no boundary markers, file ignored")
        traces.extend(found)
        classes.extend(dclasses for _ in found)
    logger.info(f"Loaded {len(traces)} trace(s) from {len(paths)} file(s) in {root}")
    return InferenceCorpus(label or root.name, traces, max_len, classes)


# --- schema ----------------------------------------------------------------------------


def constraint_to_dict(c: ArgConstraint) -> dict:
    data: dict = {"key": c.key, "kind": c.kind}
    if c.value is not None:
        data["value"] = c.value
    if c.ref_step is not None:
        data["step"] = c.ref_step
    if c.ref_key is not None:
        data["ref"] = c.ref_key
    return data


def signature_to_dict(sig: Signature) -> dict:
    data: dict = {
        "kind": sig.kind,
        "steps": [
            {"syscall": step.syscall, "args": [constraint_to_dict(c) for c in step.constraints]}
            for step in sig.steps
        ],
    }
    if sig.app:
        data["app"] = sig.app
    if sig.key is not None:
        data["key"] = {"step": sig.key.step, "arg": sig.key.arg}
    return data


def signature_from_dict(data, kind: SignatureKind | None = None, app: str = "") -> Signature:
    if not isinstance(data, dict):
        raise SignatureError("Signature must be a JSON object")
    steps_raw = data.get("steps")
    if not isinstance(steps_raw, list) or not steps_raw:
        raise SignatureError("Signature needs a non-empty 'steps' list")
    steps = []
    for index, raw in enumerate(steps_raw):
        if not isinstance(raw, dict) or not isinstance(raw.get("syscall"), str):
            raise SignatureError(f"Step {index} needs a 'syscall' name")
        constraints = []
        for c in raw.get("args", []):
            if not isinstance(c, dict) or not isinstance(c.get("key"), str):
                raise SignatureError(f"Step {index}: constraint needs a 'key'")
            if c.get("kind") not in CONSTRAINT_KINDS:
                raise SignatureError(f"Step {index}: unknown constraint kind {c.get('kind')!r}")
            ref_step = c.get("step")
            if ref_step is not None and not isinstance(ref_step, int):
                raise SignatureError(f"Step {index}: constraint 'step' must be an integer")
            constraints.append(ArgConstraint(c["key"], c["kind"], c.get("value"), ref_step, c.get("ref")))
        steps.append(SignaturePattern(raw["syscall"], tuple(constraints)))
    key = None
    key_raw = data.get("key")
    if key_raw is not None:
        if not isinstance(key_raw, dict) or not isinstance(key_raw.get("step"), int) or not isinstance(key_raw.get("arg"), str):
            raise SignatureError("Signature 'key' must be {\"step\": <int>, \"arg\": <name>}")
        key = UnitKey(key_raw["step"], key_raw["arg"])
    return Signature(tuple(steps), kind or data.get("kind", "UnitStart"), data.get("app", app), key)
