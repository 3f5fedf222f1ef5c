"""Graph dumps: the hand-off format between pipeline stages.

A dump is JSON lines. The first line is the header
``{"format":"provtrace-dump","version":1}``; every following line is one
record with a ``type`` key: ``event``, ``entity``, ``edge``, ``dclass``,
``diagnostic``, then after partitioning ``group`` and ``unit``, and after a
traversal ``slice``. Keys are sorted and separators compact, so writing the
same state twice gives identical bytes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import IO, Iterator, Optional

try:
    from .errors import DumpFormatError, InvariantViolation
    from .forensics import CausalSlice, SeedPoint
    from .graph import Diagnostic, ProvenanceGraph
    from .ingest import event_from_dict, event_to_dict
    from .logger import get_logger
    from .model import (
        Entity,
        Event,
        ExecutionUnit,
        FileEntity,
        FlowEdge,
        ProcessEntity,
        QueueEntity,
        SocketEntity,
        UnitState,
    )
    from .partition import Partition
except ImportError:  # pragma: no cover
    from errors import DumpFormatError, InvariantViolation  # type: ignore
    from forensics import CausalSlice, SeedPoint  # type: ignore
    from graph import Diagnostic, ProvenanceGraph  # type: ignore
    from ingest import event_from_dict, event_to_dict  # type: ignore
    from logger import get_logger  # type: ignore
    from model import (  # type: ignore
        Entity,
        Event,
        ExecutionUnit,
        FileEntity,
        FlowEdge,
        ProcessEntity,
        QueueEntity,
        SocketEntity,
        UnitState,
    )
    from partition import Partition  # type: ignore

logger = get_logger("provtrace.storage")

DUMP_FORMAT = "provtrace-dump"
DUMP_VERSION = 1


@dataclass
class Dump:
    events: list[Event]
    graph: ProvenanceGraph
    partition: Optional[Partition] = None
    slice: Optional[CausalSlice] = None


def _line(record: dict) -> str:
    return json.dumps(record, sort_keys=True, separators=(",", ":"), ensure_ascii=False) + "\n"


def entity_to_dict(eid: int, entity: Entity) -> dict:
    record: dict = {"type": "entity", "id": eid, "kind": entity.kind}
    if isinstance(entity, ProcessEntity):
        record.update(pid=entity.pid, incarnation=entity.incarnation, pgid=entity.pgid, comm=entity.comm)
    elif isinstance(entity, FileEntity):
        record.update(path=entity.path, lo=entity.lo, hi=entity.hi)
    elif isinstance(entity, SocketEntity):
        origin = list(entity.origin) if entity.origin is not None else None
        record.update(local=entity.local, remote=entity.remote, proto=entity.proto, origin=origin)
    else:
        record.update(qid=entity.qid)
    return record


def entity_from_dict(record: dict) -> Entity:
    kind = record.get("kind")
    if kind == "process":
        return ProcessEntity(record["pid"], record["incarnation"], record["pgid"], record["comm"])
    if kind == "file":
        return FileEntity(record["path"], record["lo"], record["hi"])
    if kind == "socket":
        origin = tuple(record["origin"]) if record["origin"] is not None else None
        return SocketEntity(record["local"], record["remote"], record["proto"], origin)
    if kind == "queue":
        return QueueEntity(record["qid"])
    raise DumpFormatError(f"Unknown entity kind {kind!r}")


def iter_records(dump: Dump) -> Iterator[dict]:
    graph, partition = dump.graph, dump.partition
    yield {"format": DUMP_FORMAT, "version": DUMP_VERSION}
    for event in dump.events:
        yield {"type": "event", **event_to_dict(event)}
    for eid, entity in enumerate(graph.entities):
        yield entity_to_dict(eid, entity)
    for edge in graph.edges:
        unit = partition.unit_of(edge.seq) if partition is not None else edge.unit
        record = {"type": "edge", "src": edge.src, "dst": edge.dst, "seq": edge.seq, "ts": edge.timestamp, "kind": edge.kind}
        if unit is not None:
            record["unit"] = unit
        if edge.prior is not None:
            record["prior"] = edge.prior
        yield record
    for seq in sorted(graph.descriptor_classes):
        yield {"type": "dclass", "seq": seq, "class": graph.descriptor_classes[seq]}
    for diag in graph.diagnostics:
        yield {"type": "diagnostic", "seq": diag.seq, "kind": diag.kind, "detail": diag.detail}
    if partition is not None:
        for pgid in sorted(partition.timelines):
            seqs, ids = partition.timelines[pgid]
            yield {
                "type": "group",
                "pgid": pgid,
                "profile": partition.profiles.get(pgid, ""),
                "timeline": [[s, u] for s, u in zip(seqs, ids)],
            }
        for uid in sorted(partition.units):
            unit = partition.units[uid]
            yield {
                "type": "unit",
                "id": uid,
                "pgid": unit.owner_pgid,
                "key": unit.key,
                "ordinal": unit.ordinal,
                "state": unit.state.value,
                "profile": unit.profile,
                "members": list(unit.member_seqs),
                "provenance": sorted(unit.provenance),
            }
    if dump.slice is not None:
        s = dump.slice
        yield {
            "type": "slice",
            "direction": s.direction,
            "seed": [s.seed.entity, s.seed.at_seq],
            "entities": sorted(s.entities),
            "edges": [edge.seq for edge in s.edges],
            "roots": list(s.root_candidates),
            "untrusted": sorted(s.untrusted),
        }


def dumps(dump: Dump) -> str:
    return "".join(_line(record) for record in iter_records(dump))


def write_dump(dump: Dump, target: str | Path | IO[str]) -> None:
    if isinstance(target, (str, Path)):
        with open(target, "w", encoding="utf-8", newline="\n") as fh:
            write_dump(dump, fh)
        logger.info(f"Wrote dump to {target}")
        return
    for record in iter_records(dump):
        target.write(_line(record))


def _load_header(first: str) -> None:
    try:
        header = json.loads(first)
    except json.JSONDecodeError as exc:
        raise DumpFormatError(f"Dump header is not JSON: {exc}") from exc
    if not isinstance(header, dict) or header.get("format") != DUMP_FORMAT:
        raise DumpFormatError("Not a provtrace dump (missing format header)")
    if header.get("version") != DUMP_VERSION:
        raise DumpFormatError(f"Unsupported dump version {header.get('version')!r} (expected {DUMP_VERSION})")


def read_dump(source: str | Path | IO[str]) -> Dump:
    if isinstance(source, (str, Path)):
        with open(source, "r", encoding="utf-8") as fh:
            return read_dump(fh)

    lines = iter(source)
    first = next(lines, None)
    if first is None or not first.strip():
        raise DumpFormatError("Empty dump")
    _load_header(first)

    events: list[Event] = []
    entities: dict[int, Entity] = {}
    edges: list[FlowEdge] = []
    dclasses: dict[int, str] = {}
    diagnostics: list[Diagnostic] = []
    groups: dict[int, dict] = {}
    units: dict[int, ExecutionUnit] = {}
    slice_record = None

    for line_no, line in enumerate(lines, start=2):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
            kind = record["type"]
            if kind == "event":
                events.append(event_from_dict(record))
            elif kind == "entity":
                entities[record["id"]] = entity_from_dict(record)
            elif kind == "edge":
                edges.append(
                    FlowEdge(
                        record["src"], record["dst"], record["seq"], record["ts"], record["kind"],
                        record.get("unit"), record.get("prior"),
                    )
                )
            elif kind == "dclass":
                dclasses[record["seq"]] = record["class"]
            elif kind == "diagnostic":
                diagnostics.append(Diagnostic(record["seq"], record["kind"], record["detail"]))
            elif kind == "group":
                groups[record["pgid"]] = record
            elif kind == "unit":
                units[record["id"]] = ExecutionUnit(
                    record["id"],
                    record["pgid"],
                    record["key"],
                    record["ordinal"],
                    UnitState(record["state"]),
                    tuple(record["members"]),
                    frozenset(record["provenance"]),
                    record.get("profile", ""),
                )
            elif kind == "slice":
                slice_record = record
            else:
                raise DumpFormatError(f"line {line_no}: unknown record type {kind!r}")
        except DumpFormatError:
            raise
        except (json.JSONDecodeError, KeyError, TypeError, ValueError, InvariantViolation) as exc:
            raise DumpFormatError(f"line {line_no}: {exc}") from exc

    if sorted(entities) != list(range(len(entities))):
        raise DumpFormatError("Entity ids are not contiguous")
    try:
        graph = ProvenanceGraph([entities[i] for i in range(len(entities))], edges, diagnostics, dclasses)
    except InvariantViolation as exc:
        raise DumpFormatError(f"Inconsistent graph in dump: {exc}") from exc

    partition = None
    if units or groups:
        assignment = {seq: uid for uid, unit in units.items() for seq in unit.member_seqs}
        timelines = {
            pgid: ([s for s, _ in g["timeline"]], [u for _, u in g["timeline"]]) for pgid, g in groups.items()
        }
        profiles = {pgid: g["profile"] for pgid, g in groups.items()}
        partition = Partition(units, assignment, timelines, profiles)

    causal = None
    if slice_record is not None:
        try:
            seed_eid, seed_seq = slice_record["seed"]
            causal = CausalSlice(
                frozenset(slice_record["entities"]),
                tuple(graph.edge_at(seq) for seq in slice_record["edges"]),
                tuple(slice_record["roots"]),
                SeedPoint(seed_eid, seed_seq),
                slice_record["direction"],
                frozenset(slice_record["untrusted"]),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise DumpFormatError(f"Malformed slice record: {exc}") from exc
        if any(edge is None for edge in causal.edges):
            raise DumpFormatError("Slice references an edge missing from the graph")

    logger.debug(f"Read dump: {len(events)} events, {len(graph.entities)} entities, {len(graph.edges)} edges")
    return Dump(events, graph, partition, causal)
