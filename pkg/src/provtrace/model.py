"""Core domain types: events, entities, flow edges, signatures and units."""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from enum import Enum
from typing import ClassVar, Literal, Union

try:
    from .errors import EntitySpecError, InvariantViolation, SignatureError, UnrecognizedSyscall
except ImportError:  # pragma: no cover
    from errors import EntitySpecError, InvariantViolation, SignatureError, UnrecognizedSyscall  # type: ignore


class Category(str, Enum):
    INFORMATION_FLOW = "InformationFlow"
    CREATION = "Creation"
    PREPARATORY = "Preparatory"
    TERMINATION = "Termination"


@dataclass(frozen=True, slots=True)
class SyscallKind:
    name: str
    category: Category

    @property
    def is_flow(self) -> bool:
        return self.category is Category.INFORMATION_FLOW


EXEC_FAMILY = frozenset({"execve", "execl", "execv", "execle", "execlp", "execvp"})
PROCESS_CREATION = frozenset({"clone", "fork", "vfork", "rfork"})
READ_FAMILY = frozenset({"read", "recv", "recvfrom", "recvmsg"})
WRITE_FAMILY = frozenset({"write", "pwrite", "writev", "pwritev", "send", "sendto", "sendmsg"})
POSITIONAL_WRITES = frozenset({"pwrite", "pwritev"})

CALLER_TO_OBJECT = WRITE_FAMILY | PROCESS_CREATION | {"msgsnd"}
OBJECT_TO_CALLER = READ_FAMILY | EXEC_FAMILY | {"wait", "msgrcv"}

SYSCALL_TABLE: dict[str, Category] = {
    **{name: Category.INFORMATION_FLOW for name in CALLER_TO_OBJECT | OBJECT_TO_CALLER},
    **{name: Category.CREATION for name in ("open", "creat", "dup", "link", "socket", "socketpair")},
    **{name: Category.PREPARATORY for name in ("lseek", "connect", "listen", "accept", "bind")},
    **{name: Category.TERMINATION for name in ("close", "exit", "exit_group", "unlink", "kill")},
}

# Boundary marker injected by corpus recorders; not a system call.
MARKER_SYSCALL = "mark"

CLONE_THREAD = 0x10000

ArgValue = Union[int, str]
Args = tuple[tuple[str, ArgValue], ...]


def is_known_syscall(name: str) -> bool:
    return name in SYSCALL_TABLE


def is_thread_clone(args) -> bool:
    flags = _lookup(args, "flags")
    if isinstance(flags, int):
        return bool(flags & CLONE_THREAD)
    if isinstance(flags, str):
        return "CLONE_THREAD" in flags.replace(" ", "").split("|")
    return False


def classify(name: str, args=()) -> SyscallKind:
    category = SYSCALL_TABLE.get(name)
    if category is None:
        raise UnrecognizedSyscall(name)
    if name == "clone" and is_thread_clone(args):
        category = Category.PREPARATORY
    return SyscallKind(name, category)


def _lookup(args, key: str, default=None):
    if isinstance(args, dict):
        return args.get(key, default)
    for k, v in args:
        if k == key:
            return v
    return default


@dataclass(frozen=True, slots=True)
class Event:
    seq: int
    timestamp: int
    pid: int
    tid: int
    pgid: int
    comm: str
    syscall: str
    args: Args = ()
    retval: int = 0

    def arg(self, key: str, default=None):
        return _lookup(self.args, key, default)

    def value(self, key: str, default=None):
        """Like ``arg`` but also resolves the pseudo-key ``retval``."""
        if key == "retval":
            return self.retval
        return _lookup(self.args, key, default)

    def has_arg(self, key: str) -> bool:
        return any(k == key for k, _ in self.args)

    @property
    def kind(self) -> SyscallKind:
        return classify(self.syscall, self.args)


# --- entities -----------------------------------------------------------------


@dataclass(frozen=True, slots=True)
class ProcessEntity:
    kind: ClassVar[str] = "process"

    pid: int
    incarnation: int = 0
    pgid: int = field(default=0, compare=False)
    comm: str = field(default="", compare=False)


@dataclass(frozen=True, slots=True)
class FileEntity:
    """A file, optionally narrowed to the byte interval [lo, hi).

    ``lo is None`` is the whole-file interval [0, inf).
    """

    kind: ClassVar[str] = "file"

    path: str
    lo: int | None = None
    hi: int | None = None

    def __post_init__(self):
        if (self.lo is None) != (self.hi is None):
            raise InvariantViolation(f"File interval needs both bounds: {self.path} [{self.lo},{self.hi})")
        if self.lo is not None and not (0 <= self.lo < self.hi):
            raise InvariantViolation(f"Empty or negative file interval: {self.path} [{self.lo},{self.hi})")

    @property
    def whole(self) -> bool:
        return self.lo is None

    def overlaps(self, other: "FileEntity") -> bool:
        if self.path != other.path:
            return False
        if self.whole or other.whole:
            return True
        return self.lo < other.hi and other.lo < self.hi


@dataclass(frozen=True, slots=True)
class SocketEntity:
    """A socket endpoint.

    Identified by the (local, remote) pair once connect/accept supplies it;
    before that ``origin`` = (pid, fd, creation seq) keeps it distinct.
    """

    kind: ClassVar[str] = "socket"

    local: str | None = None
    remote: str | None = None
    proto: str = "tcp"
    origin: tuple[int, int, int] | None = None


@dataclass(frozen=True, slots=True)
class QueueEntity:
    kind: ClassVar[str] = "queue"

    qid: int


Entity = Union[ProcessEntity, FileEntity, SocketEntity, QueueEntity]

EntityKind = Literal["process", "file", "socket", "queue"]


@dataclass(frozen=True, slots=True)
class FlowEdge:
    src: int
    dst: int
    seq: int
    timestamp: int
    kind: str
    unit: int | None = None
    # exec-family only: the process incarnation the exec replaced
    prior: int | None = None

    def __post_init__(self):
        if self.src == self.dst:
            raise InvariantViolation(f"Self edge on entity {self.src} at seq {self.seq}")
        if SYSCALL_TABLE.get(self.kind) is not Category.INFORMATION_FLOW:
            raise InvariantViolation(f"Edge kind {self.kind!r} is not an information flow")

    @property
    def sources(self) -> tuple[int, ...]:
        if self.prior is None:
            return (self.src,)
        return (self.src, self.prior)


def flow_direction(event: Event, caller, obj):
    """Order (caller, object) into (source, destination) for a flow event."""
    name = event.syscall
    if name in CALLER_TO_OBJECT:
        return caller, obj
    if name in OBJECT_TO_CALLER:
        return obj, caller
    raise InvariantViolation(f"flow_direction called on non-flow syscall {name!r}")


# --- entity specs ----------------------------------------------------------------

_PROC_SPEC = re.compile(r"^(\d+)(?:#(\d+))?$")
_INTERVAL_SUFFIX = re.compile(r"^(.*)@(\d+),(\d+)$", re.DOTALL)
_SOCK_SPEC = re.compile(r"^(\*|.+?:\d+)-(\*|.+:\d+)$")


def entity_spec(entity: Entity) -> str:
    if isinstance(entity, ProcessEntity):
        return f"proc:{entity.pid}#{entity.incarnation}"
    if isinstance(entity, FileEntity):
        if entity.whole:
            return f"file:{entity.path}"
        return f"file:{entity.path}@{entity.lo},{entity.hi}"
    if isinstance(entity, SocketEntity):
        return f"sock:{entity.local or '*'}-{entity.remote or '*'}"
    return f"mq:{entity.qid}"


@dataclass(frozen=True, slots=True)
class EntitySpec:
    """A parsed entity spec; ``None`` fields match anything."""

    kind: EntityKind
    pid: int | None = None
    incarnation: int | None = None
    path: str | None = None
    interval: tuple[int, int] | None = None
    whole: bool = False
    local: str | None = None
    remote: str | None = None
    qid: int | None = None

    def matches(self, entity: Entity) -> bool:
        if entity.kind != self.kind:
            return False
        if isinstance(entity, ProcessEntity):
            return entity.pid == self.pid and (
                self.incarnation is None or entity.incarnation == self.incarnation
            )
        if isinstance(entity, FileEntity):
            if entity.path != self.path:
                return False
            if self.interval is not None:
                return (entity.lo, entity.hi) == self.interval
            return entity.whole if self.whole else True
        if isinstance(entity, SocketEntity):
            return (self.local is None or entity.local == self.local) and (
                self.remote is None or entity.remote == self.remote
            )
        return entity.qid == self.qid


def parse_entity_spec(text: str) -> EntitySpec:
    """Parse ``proc:<pid>[#inc]``, ``file:<path>[@lo,hi]``, ``sock:<laddr>-<raddr>``, ``mq:<qid>``."""
    prefix, sep, body = text.partition(":")
    if not sep or not body:
        raise EntitySpecError(f"Invalid entity spec '{text}'")
    if prefix == "proc":
        m = _PROC_SPEC.match(body)
        if not m:
            raise EntitySpecError(f"Invalid process spec '{text}' (expected proc:<pid>[#inc])")
        inc = int(m.group(2)) if m.group(2) is not None else None
        return EntitySpec("process", pid=int(m.group(1)), incarnation=inc)
    if prefix == "file":
        m = _INTERVAL_SUFFIX.match(body)
        if m:
            lo, hi = int(m.group(2)), int(m.group(3))
            if lo >= hi:
                raise EntitySpecError(f"Invalid file interval in '{text}': lo must be < hi")
            return EntitySpec("file", path=m.group(1), interval=(lo, hi))
        return EntitySpec("file", path=body)
    if prefix == "sock":
        m = _SOCK_SPEC.match(body)
        if not m:
            raise EntitySpecError(f"Invalid socket spec '{text}' (expected sock:<laddr>-<raddr>)")
        local = None if m.group(1) == "*" else m.group(1)
        remote = None if m.group(2) == "*" else m.group(2)
        return EntitySpec("socket", local=local, remote=remote)
    if prefix == "mq":
        if not body.isdigit():
            raise EntitySpecError(f"Invalid queue spec '{text}'")
        return EntitySpec("queue", qid=int(body))
    raise EntitySpecError(f"Unknown entity kind '{prefix}' in '{text}'")


# --- signatures and units ---------------------------------------------------------

ConstraintKind = Literal["exact", "same-as-step", "any", "path-prefix", "descriptor-class"]
CONSTRAINT_KINDS = ("exact", "same-as-step", "any", "path-prefix", "descriptor-class")
DESCRIPTOR_CLASSES = ("file", "socket", "pipe")


@dataclass(frozen=True, slots=True)
class ArgConstraint:
    key: str
    kind: ConstraintKind
    value: ArgValue | None = None
    ref_step: int | None = None
    # arg key read from the referenced step ("retval" allowed)
    ref_key: str | None = None

    def __post_init__(self):
        if self.kind not in CONSTRAINT_KINDS:
            raise SignatureError(f"Unknown constraint kind '{self.kind}'")
        if self.kind == "same-as-step" and self.ref_step is None:
            raise SignatureError(f"same-as-step constraint on '{self.key}' needs a step reference")
        if self.kind == "descriptor-class" and self.value not in DESCRIPTOR_CLASSES:
            raise SignatureError(f"Descriptor class must be one of {DESCRIPTOR_CLASSES}, got {self.value!r}")
        if self.kind == "path-prefix" and not isinstance(self.value, str):
            raise SignatureError(f"path-prefix constraint on '{self.key}' needs a string prefix")


@dataclass(frozen=True, slots=True)
class SignaturePattern:
    syscall: str
    constraints: tuple[ArgConstraint, ...] = ()

    @property
    def exact_count(self) -> int:
        return sum(1 for c in self.constraints if c.kind == "exact")


@dataclass(frozen=True, slots=True)
class UnitKey:
    """Which argument of which matched step identifies the unit."""

    step: int
    arg: str


SignatureKind = Literal["UnitStart", "UnitSwitch"]


@dataclass(frozen=True, slots=True)
class Signature:
    steps: tuple[SignaturePattern, ...]
    kind: SignatureKind = "UnitStart"
    app: str = ""
    key: UnitKey | None = None

    def __post_init__(self):
        if not self.steps:
            raise SignatureError("Signature must have at least one step")
        if self.kind not in ("UnitStart", "UnitSwitch"):
            raise SignatureError(f"Unknown signature kind '{self.kind}'")
        for index, step in enumerate(self.steps):
            for c in step.constraints:
                if c.kind == "same-as-step" and not (0 <= c.ref_step < index):
                    raise SignatureError(
                        f"Step {index} constraint on '{c.key}' references step {c.ref_step}, "
                        "which is not an earlier step"
                    )
        if self.key is not None and not (0 <= self.key.step < len(self.steps)):
            raise SignatureError(f"Unit key references missing step {self.key.step}")

    def __len__(self) -> int:
        return len(self.steps)


@dataclass(frozen=True, slots=True)
class NoSignature:
    """Mining found no usable common subsequence: the application is not suitable for partitioning."""

    reason: str
    length: int = 0


class UnitState(str, Enum):
    ACTIVE = "Active"
    INACTIVE = "Inactive"
    CLOSED = "Closed"


@dataclass(frozen=True, slots=True)
class ExecutionUnit:
    id: int
    owner_pgid: int
    key: str
    ordinal: int
    state: UnitState
    member_seqs: tuple[int, ...] = ()
    provenance: frozenset[int] = frozenset()
    profile: str = ""

    @property
    def is_preamble(self) -> bool:
        return self.ordinal == 0
