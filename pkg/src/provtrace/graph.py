"""Whole-system dependency graph construction.

``GraphBuilder`` folds an ordered event stream into a ``ProvenanceGraph``:
it keeps a descriptor table per process incarnation, resolves syscall
arguments to entities and emits one ``FlowEdge`` per information-flow event.
Trace anomalies never abort the build; they are collected as diagnostics.
"""

from __future__ import annotations

from bisect import bisect_left
from dataclasses import dataclass, replace
from typing import Callable, Iterable, Iterator, Literal, Sequence

import networkx as nx

try:
    from .errors import EntitySpecError, InvariantViolation, OutOfOrderSeq
    from .logger import get_logger
    from .model import (
        EXEC_FAMILY,
        POSITIONAL_WRITES,
        PROCESS_CREATION,
        READ_FAMILY,
        SYSCALL_TABLE,
        WRITE_FAMILY,
        Entity,
        EntitySpec,
        Event,
        FileEntity,
        FlowEdge,
        ProcessEntity,
        QueueEntity,
        SocketEntity,
        flow_direction,
        is_thread_clone,
        parse_entity_spec,
    )
except ImportError:  # pragma: no cover
    from errors import EntitySpecError, InvariantViolation, OutOfOrderSeq  # type: ignore
    from logger import get_logger  # type: ignore
    from model import (  # type: ignore
        EXEC_FAMILY,
        POSITIONAL_WRITES,
        PROCESS_CREATION,
        READ_FAMILY,
        SYSCALL_TABLE,
        WRITE_FAMILY,
        Entity,
        EntitySpec,
        Event,
        FileEntity,
        FlowEdge,
        ProcessEntity,
        QueueEntity,
        SocketEntity,
        flow_direction,
        is_thread_clone,
        parse_entity_spec,
    )

logger = get_logger("provtrace.graph")

DescriptorClass = Literal["file", "socket", "pipe", "unknown"]

DiagnosticKind = Literal[
    "unknown-descriptor",
    "unknown-process",
    "missing-argument",
    "failed-call",
    "no-flow",
]

EINPROGRESS = -115


@dataclass(frozen=True, slots=True)
class Diagnostic:
    seq: int
    kind: DiagnosticKind
    detail: str


# --- provenance graph ----------------------------------------------------------------


class ProvenanceGraph:
    """Immutable entity store plus seq-ordered flow edges and adjacency indexes."""

    def __init__(
        self,
        entities: Sequence[Entity],
        edges: Sequence[FlowEdge],
        diagnostics: Sequence[Diagnostic] = (),
        descriptor_classes: dict[int, str] | None = None,
    ):
        self.entities: tuple[Entity, ...] = tuple(entities)
        self.edges: tuple[FlowEdge, ...] = tuple(edges)
        self.diagnostics: tuple[Diagnostic, ...] = tuple(diagnostics)
        self.descriptor_classes: dict[int, str] = dict(descriptor_classes or {})

        self._index: dict[Entity, int] = {}
        for eid, entity in enumerate(self.entities):
            if entity in self._index:
                raise InvariantViolation(f"Entity {entity!r} stored twice")
            self._index[entity] = eid

        count = len(self.entities)
        self._by_seq: dict[int, FlowEdge] = {}
        self._paths: dict[str, list[int]] = {}
        self._alias_cache: dict[int, tuple[int, ...]] = {}

        # nodes are entity ids; one edge per (source, dst) pair, keyed by seq
        digraph = nx.MultiDiGraph()
        for eid, entity in enumerate(self.entities):
            digraph.add_node(eid, entity=entity)
            if isinstance(entity, FileEntity):
                self._paths.setdefault(entity.path, []).append(eid)

        previous = None
        for edge in self.edges:
            if previous is not None and edge.seq <= previous:
                raise InvariantViolation(f"Edges not strictly ordered by seq at {edge.seq}")
            previous = edge.seq
            endpoints = (edge.dst, *edge.sources)
            if any(not (0 <= e < count) for e in endpoints):
                raise InvariantViolation(f"Edge at seq {edge.seq} references a missing entity")
            self._by_seq[edge.seq] = edge
            for source in edge.sources:
                digraph.add_edge(
                    source, edge.dst, key=edge.seq, seq=edge.seq, kind=edge.kind, unit=edge.unit, timestamp=edge.timestamp
                )
        self._digraph = nx.freeze(digraph)

        # seq-sorted keys per node, for time-window queries
        self._incoming_seqs = [sorted({key for _, _, key in digraph.in_edges(eid, keys=True)}) for eid in range(count)]
        self._outgoing_seqs = [sorted({key for _, _, key in digraph.out_edges(eid, keys=True)}) for eid in range(count)]

    def __len__(self) -> int:
        return len(self.entities)

    @property
    def digraph(self) -> nx.MultiDiGraph:
        """Frozen networkx view of the graph: entity ids as nodes, flow edges keyed by seq."""
        return self._digraph

    def entity(self, eid: int) -> Entity:
        return self.entities[eid]

    def find(self, entity: Entity) -> int | None:
        return self._index.get(entity)

    def edge_at(self, seq: int) -> FlowEdge | None:
        return self._by_seq.get(seq)

    def incoming(self, eid: int) -> list[FlowEdge]:
        return [self._by_seq[seq] for seq in self._incoming_seqs[eid]]

    def outgoing(self, eid: int) -> list[FlowEdge]:
        return [self._by_seq[seq] for seq in self._outgoing_seqs[eid]]

    def incoming_between(self, eid: int, lo: int, hi: int) -> Iterator[FlowEdge]:
        """Incoming edges with lo <= seq < hi, in seq order."""
        seqs = self._incoming_seqs[eid]
        for seq in seqs[bisect_left(seqs, lo) : bisect_left(seqs, hi)]:
            yield self._by_seq[seq]

    def outgoing_between(self, eid: int, lo: int, hi: int) -> Iterator[FlowEdge]:
        """Outgoing edges with lo <= seq < hi, in seq order."""
        seqs = self._outgoing_seqs[eid]
        for seq in seqs[bisect_left(seqs, lo) : bisect_left(seqs, hi)]:
            yield self._by_seq[seq]

    def roots(self, entities: Iterable[int], edges: Iterable[FlowEdge]) -> tuple[int, ...]:
        """Entities with no incoming edge among ``edges``, counting flows into any overlapping alias."""
        members = set(entities)
        reached = nx.MultiDiGraph()
        reached.add_nodes_from(members)
        reached.add_edges_from((source, edge.dst, edge.seq) for edge in edges for source in edge.sources)
        return tuple(
            eid
            for eid in sorted(members)
            if all(reached.in_degree(alias) == 0 for alias in self.aliases(eid) if alias in members)
        )

    def aliases(self, eid: int) -> tuple[int, ...]:
        """Entities denoting overlapping bytes of the same file (including ``eid``)."""
        cached = self._alias_cache.get(eid)
        if cached is not None:
            return cached
        entity = self.entities[eid]
        if isinstance(entity, FileEntity):
            result = tuple(
                other
                for other in self._paths.get(entity.path, ())
                if other == eid or entity.overlaps(self.entities[other])
            )
        else:
            result = (eid,)
        self._alias_cache[eid] = result
        return result

    def is_external(self, eid: int) -> bool:
        """Sockets with a remote endpoint carry data off the traced host."""
        entity = self.entities[eid]
        return isinstance(entity, SocketEntity) and entity.remote is not None and entity.proto != "unix"

    def resolve(self, spec: str | EntitySpec, at_seq: int | None = None) -> int:
        """Resolve an entity spec to one id; ``at_seq`` disambiguates by a touching edge."""
        parsed = parse_entity_spec(spec) if isinstance(spec, str) else spec
        candidates = [eid for eid, entity in enumerate(self.entities) if parsed.matches(entity)]
        if at_seq is not None and len(candidates) > 1:
            edge = self.edge_at(at_seq)
            touching = {edge.dst, *edge.sources} if edge is not None else set()
            narrowed = [eid for eid in candidates if eid in touching]
            if narrowed:
                candidates = narrowed
        if not candidates:
            raise EntitySpecError(f"No entity matches '{spec}'")
        if len(candidates) > 1:
            if parsed.kind == "process" and parsed.incarnation is None:
                # Latest incarnation wins for a bare pid.
                return max(candidates, key=lambda eid: self.entities[eid].incarnation)
            raise EntitySpecError(f"Entity spec '{spec}' is ambiguous ({len(candidates)} matches)")
        return candidates[0]

    def annotate(self, unit_of: Callable[[int], int | None]) -> "ProvenanceGraph":
        """Copy of this graph with each edge's unit filled from ``unit_of(seq)``."""
        edges = [replace(edge, unit=unit_of(edge.seq)) for edge in self.edges]
        return ProvenanceGraph(self.entities, edges, self.diagnostics, self.descriptor_classes)

    def summary(self) -> dict:
        kinds: dict[str, int] = {}
        for entity in self.entities:
            kinds[entity.kind] = kinds.get(entity.kind, 0) + 1
        return {
            "entities": len(self.entities),
            "edges": len(self.edges),
            "diagnostics": len(self.diagnostics),
            "entity_kinds": dict(sorted(kinds.items())),
        }


# --- builder state -----------------------------------------------------------------------


@dataclass(slots=True)
class _FileSlot:
    path: str
    offset: int | None = 0
    synthetic: bool = False

    @property
    def dclass(self) -> DescriptorClass:
        return "unknown" if self.synthetic else "file"

    def describe(self) -> str:
        return f"file:{self.path}"


@dataclass(slots=True)
class _SocketSlot:
    proto: str
    origin: tuple[int, int, int]
    local: str | None = None
    remote: str | None = None
    pair: bool = False

    @property
    def dclass(self) -> DescriptorClass:
        return "pipe" if self.pair else "socket"

    def describe(self) -> str:
        return f"socket:{self.proto}:{self.local or '*'}-{self.remote or '*'}:{self.origin}"


@dataclass(slots=True)
class _Proc:
    pid: int
    incarnation: int
    pgid: int
    comm: str
    table: dict
    entity_id: int | None = None
    alive: bool = True
    # forked child whose own first event has not been seen yet
    fresh: bool = False


class GraphBuilder:
    """Incremental graph construction; ``feed`` batches in seq order, then ``finish``."""

    def __init__(self):
        self._entities: list[Entity] = []
        self._index: dict[Entity, int] = {}
        self._edges: list[FlowEdge] = []
        self._diagnostics: list[Diagnostic] = []
        self._dclass: dict[int, str] = {}
        self._procs: dict[int, _Proc] = {}
        self._next_inc: dict[int, int] = {}
        self._last_seq: int | None = None
        self._handlers: dict[str, Callable[[_Proc, Event, bool], FlowEdge | None]] = {
            "open": self._on_open,
            "creat": self._on_open,
            "dup": self._on_dup,
            "socket": self._on_socket,
            "socketpair": self._on_socketpair,
            "lseek": self._on_lseek,
            "connect": self._on_connect,
            "bind": self._on_bind,
            "accept": self._on_accept,
            "close": self._on_close,
            "exit": self._on_exit,
            "exit_group": self._on_exit,
            "wait": self._on_wait,
            "msgsnd": self._on_queue,
            "msgrcv": self._on_queue,
        }
        for name in PROCESS_CREATION:
            self._handlers[name] = self._on_fork
        for name in EXEC_FAMILY:
            self._handlers[name] = self._on_exec
        for name in READ_FAMILY:
            self._handlers[name] = self._on_read
        for name in WRITE_FAMILY:
            self._handlers[name] = self._on_write

    # public API

    def feed(self, events: Iterable[Event]) -> "GraphBuilder":
        for event in events:
            self.apply(event)
        return self

    def apply(self, event: Event) -> FlowEdge | None:
        if self._last_seq is not None and event.seq <= self._last_seq:
            raise OutOfOrderSeq(self._last_seq, event.seq)
        self._last_seq = event.seq
        if event.syscall not in SYSCALL_TABLE:
            return None
        proc, created = self._caller(event)
        handler = self._handlers.get(event.syscall)
        if handler is None:
            return None
        return handler(proc, event, created)

    def finish(self) -> ProvenanceGraph:
        return ProvenanceGraph(self._entities, self._edges, self._diagnostics, self._dclass)

    @property
    def diagnostics(self) -> list[Diagnostic]:
        return list(self._diagnostics)

    def descriptors(self, pid: int) -> dict[int, str]:
        """Current descriptor table of ``pid`` as fd -> description."""
        proc = self._procs.get(pid)
        if proc is None:
            return {}
        return {fd: slot.describe() for fd, slot in sorted(proc.table.items())}

    # entities and processes

    def _intern(self, entity: Entity) -> tuple[int, bool]:
        eid = self._index.get(entity)
        if eid is not None:
            return eid, False
        eid = len(self._entities)
        self._entities.append(entity)
        self._index[entity] = eid
        return eid, True

    def _new_proc(self, pid: int, pgid: int, comm: str, table: dict) -> _Proc:
        inc = self._next_inc.get(pid, 0)
        self._next_inc[pid] = inc + 1
        proc = _Proc(pid, inc, pgid, comm, table)
        self._procs[pid] = proc
        return proc

    def _caller(self, event: Event) -> tuple[_Proc, bool]:
        proc = self._procs.get(event.pid)
        if proc is None or not proc.alive:
            return self._new_proc(event.pid, event.pgid, event.comm, {}), True
        if proc.fresh:
            proc.fresh = False
            if proc.pgid != event.pgid:
                proc.pgid = event.pgid
                if proc.entity_id is not None:
                    self._entities[proc.entity_id] = ProcessEntity(proc.pid, proc.incarnation, proc.pgid, proc.comm)
        return proc, False

    def _proc_id(self, proc: _Proc) -> int:
        if proc.entity_id is None:
            proc.entity_id, _ = self._intern(ProcessEntity(proc.pid, proc.incarnation, proc.pgid, proc.comm))
        return proc.entity_id

    def _diagnose(self, event: Event, kind: DiagnosticKind, detail: str):
        self._diagnostics.append(Diagnostic(event.seq, kind, detail))
        logger.debug(f"seq {event.seq}: {kind}: {detail}")

    def _edge(self, event: Event, src: int, dst: int, prior: int | None = None) -> FlowEdge | None:
        if src == dst:
            self._diagnose(event, "no-flow", f"{event.syscall} flows from entity {src} to itself")
            return None
        edge = FlowEdge(src, dst, event.seq, event.timestamp, event.syscall, None, prior)
        self._edges.append(edge)
        return edge

    def _int_arg(self, event: Event, key: str) -> int | None:
        value = event.arg(key)
        if isinstance(value, int):
            return value
        self._diagnose(event, "missing-argument", f"{event.syscall} without integer '{key}'")
        return None

    def _str_arg(self, event: Event, key: str) -> str | None:
        value = event.arg(key)
        if isinstance(value, str):
            return value
        self._diagnose(event, "missing-argument", f"{event.syscall} without string '{key}'")
        return None

    # descriptors

    def _synthetic_slot(self, proc: _Proc, fd: int, event: Event) -> _FileSlot:
        slot = _FileSlot(f"?fd/{proc.pid}#{proc.incarnation}/{fd}", offset=None, synthetic=True)
        proc.table[fd] = slot
        self._diagnose(event, "unknown-descriptor", f"pid {proc.pid} has no descriptor {fd}")
        return slot

    def _slot(self, proc: _Proc, fd: int, event: Event):
        slot = proc.table.get(fd)
        if slot is None:
            slot = self._synthetic_slot(proc, fd, event)
        self._dclass[event.seq] = slot.dclass
        return slot

    def _socket_entity(self, slot: _SocketSlot, peer: str | None) -> SocketEntity:
        remote = slot.remote or peer
        local = slot.local
        origin = None if (local and remote) else slot.origin
        return SocketEntity(local, remote, slot.proto, origin)

    def _file_entity(self, slot: _FileSlot, event: Event) -> int:
        count = event.retval
        if event.syscall in POSITIONAL_WRITES:
            offset = event.arg("offset")
            if isinstance(offset, int) and offset >= 0 and count > 0:
                return self._intern(FileEntity(slot.path, offset, offset + count))[0]
            return self._intern(FileEntity(slot.path))[0]

        start = slot.offset
        if start is None or count == 0:
            return self._intern(FileEntity(slot.path))[0]
        # an interval is never widened once an edge references it; units are assigned after the build
        end = start + count
        slot.offset = end
        return self._intern(FileEntity(slot.path, start, end))[0]

    def _io_object(self, proc: _Proc, event: Event) -> int | None:
        fd = self._int_arg(event, "fd")
        if fd is None:
            return None
        peer = event.arg("addr") if event.syscall in ("sendto", "recvfrom") else None
        peer = peer if isinstance(peer, str) else None
        slot = proc.table.get(fd)
        if slot is None and peer is not None:
            # Datagram traffic to an explicit address on a descriptor opened before the trace.
            slot = _SocketSlot("udp", (proc.pid, fd, event.seq))
            proc.table[fd] = slot
            self._dclass[event.seq] = slot.dclass
        else:
            slot = self._slot(proc, fd, event)
        if isinstance(slot, _SocketSlot):
            return self._intern(self._socket_entity(slot, peer))[0]
        return self._file_entity(slot, event)

    # handlers: creation and preparatory

    def _on_open(self, proc, event, created):
        path = self._str_arg(event, "path")
        if path is not None and event.retval >= 0:
            proc.table[event.retval] = _FileSlot(path)
        return None

    def _on_dup(self, proc, event, created):
        fd = self._int_arg(event, "fd")
        if fd is not None and event.retval >= 0:
            proc.table[event.retval] = self._slot(proc, fd, event)
        return None

    def _on_socket(self, proc, event, created):
        if event.retval >= 0:
            proc.table[event.retval] = _SocketSlot(_protocol(event), (proc.pid, event.retval, event.seq))
        return None

    def _on_socketpair(self, proc, event, created):
        fd0 = self._int_arg(event, "fd0")
        fd1 = self._int_arg(event, "fd1")
        if fd0 is not None and fd1 is not None and event.retval >= 0:
            slot = _SocketSlot("unix", (proc.pid, fd0, event.seq), pair=True)
            proc.table[fd0] = slot
            proc.table[fd1] = slot
        return None

    def _on_lseek(self, proc, event, created):
        fd = self._int_arg(event, "fd")
        if fd is None or event.retval < 0:
            return None
        slot = self._slot(proc, fd, event)
        if isinstance(slot, _FileSlot):
            slot.offset = event.retval
        return None

    def _socket_slot(self, proc: _Proc, event: Event) -> _SocketSlot | None:
        fd = self._int_arg(event, "fd")
        if fd is None:
            return None
        slot = proc.table.get(fd)
        if not isinstance(slot, _SocketSlot):
            if slot is None:
                self._diagnose(event, "unknown-descriptor", f"pid {proc.pid} has no socket {fd}")
            slot = _SocketSlot("tcp", (proc.pid, fd, event.seq))
            proc.table[fd] = slot
        self._dclass[event.seq] = slot.dclass
        return slot

    def _on_connect(self, proc, event, created):
        if event.retval not in (0, EINPROGRESS):
            return None
        slot = self._socket_slot(proc, event)
        addr = self._str_arg(event, "addr")
        if slot is not None and addr is not None:
            slot.remote = addr
            laddr = event.arg("laddr")
            if isinstance(laddr, str):
                slot.local = laddr
        return None

    def _on_bind(self, proc, event, created):
        if event.retval != 0:
            return None
        slot = self._socket_slot(proc, event)
        addr = event.arg("addr")
        if slot is not None and isinstance(addr, str):
            slot.local = addr
        return None

    def _on_accept(self, proc, event, created):
        if event.retval < 0:
            return None
        listener = self._socket_slot(proc, event)
        if listener is None:
            return None
        laddr = event.arg("laddr")
        addr = event.arg("addr")
        proc.table[event.retval] = _SocketSlot(
            listener.proto,
            (proc.pid, event.retval, event.seq),
            local=laddr if isinstance(laddr, str) else listener.local,
            remote=addr if isinstance(addr, str) else None,
        )
        return None

    # handlers: termination

    def _on_close(self, proc, event, created):
        fd = event.arg("fd")
        if isinstance(fd, int):
            slot = proc.table.pop(fd, None)
            if slot is not None:
                self._dclass[event.seq] = slot.dclass
        return None

    def _on_exit(self, proc, event, created):
        if event.syscall == "exit_group" or event.tid == event.pid:
            proc.alive = False
        return None

    # handlers: information flow

    def _on_fork(self, proc, event, created):
        if event.syscall == "clone" and is_thread_clone(event.args):
            return None
        if event.retval < 0:
            self._diagnose(event, "failed-call", f"{event.syscall} returned {event.retval}")
            return None
        if event.retval == 0:
            self._diagnose(event, "no-flow", f"{event.syscall} record from the child side")
            return None
        parent_id = self._proc_id(proc)
        child = self._new_proc(event.retval, proc.pgid, proc.comm, dict(proc.table))
        child.fresh = True
        return self._edge(event, parent_id, self._proc_id(child))

    def _on_exec(self, proc, event, created):
        if event.retval != 0:
            self._diagnose(event, "failed-call", f"{event.syscall} returned {event.retval}")
            return None
        path = self._str_arg(event, "path")
        if path is None:
            return None
        file_id, _ = self._intern(FileEntity(path))
        if created:
            proc.comm = event.comm
            return self._edge(event, file_id, self._proc_id(proc))
        prior = self._proc_id(proc)
        image = self._new_proc(proc.pid, event.pgid, event.comm, proc.table)
        return self._edge(event, file_id, self._proc_id(image), prior=prior)

    def _on_wait(self, proc, event, created):
        if event.retval < 0:
            self._diagnose(event, "failed-call", f"wait returned {event.retval}")
            return None
        child_pid = event.retval if event.retval > 0 else event.arg("pid")
        if not isinstance(child_pid, int) or child_pid <= 0:
            self._diagnose(event, "no-flow", "wait reaped no child")
            return None
        child = self._procs.get(child_pid)
        if child is None:
            self._diagnose(event, "unknown-process", f"wait on unseen pid {child_pid}")
            child = self._new_proc(child_pid, event.pgid, "?", {})
            child.alive = False
        child_id = self._proc_id(child)
        return self._edge(event, child_id, self._proc_id(proc))

    def _on_queue(self, proc, event, created):
        if event.retval < 0:
            self._diagnose(event, "failed-call", f"{event.syscall} returned {event.retval}")
            return None
        qid = self._int_arg(event, "qid")
        if qid is None:
            return None
        if event.syscall == "msgsnd":
            caller = self._proc_id(proc)
            return self._edge(event, caller, self._intern(QueueEntity(qid))[0])
        queue = self._intern(QueueEntity(qid))[0]
        return self._edge(event, queue, self._proc_id(proc))

    def _on_read(self, proc, event, created):
        if event.retval < 0:
            self._diagnose(event, "failed-call", f"{event.syscall} returned {event.retval}")
            return None
        obj = self._io_object(proc, event)
        if obj is None:
            return None
        src, dst = flow_direction(event, self._proc_id(proc), obj)
        return self._edge(event, src, dst)

    def _on_write(self, proc, event, created):
        if event.retval < 0:
            self._diagnose(event, "failed-call", f"{event.syscall} returned {event.retval}")
            return None
        caller = self._proc_id(proc)
        obj = self._io_object(proc, event)
        if obj is None:
            return None
        src, dst = flow_direction(event, caller, obj)
        return self._edge(event, src, dst)


def _protocol(event: Event) -> str:
    domain = event.arg("domain")
    sock_type = event.arg("type")
    if domain in (1, "AF_UNIX", "AF_LOCAL"):
        return "unix"
    if sock_type == 2 or (isinstance(sock_type, str) and "SOCK_DGRAM" in sock_type):
        return "udp"
    return "tcp"


def build_graph(events: Iterable[Event]) -> ProvenanceGraph:
    graph = GraphBuilder().feed(events).finish()
    if graph.diagnostics:
        logger.info(f"Graph built with {len(graph.diagnostics)} diagnostic(s)")
    return graph
