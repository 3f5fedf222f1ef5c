"""Execution partitioning of long-running process groups.

Every process group whose first event's ``comm`` matches a profile is split
into execution units:

* a completed UnitStart creates a unit and makes it active;
* a completed UnitSwitch re-activates the unit named by its key;
* every event of the group belongs to the unit active at its seq.

Events before the first boundary go to the group's preamble unit (ordinal 0).
A boundary takes effect at the first event of the completed match, so the
events that make up the signature belong to the new unit.
"""

from __future__ import annotations

from bisect import bisect_right
from dataclasses import dataclass, field
from fnmatch import fnmatchcase
from typing import Iterable, Mapping, Sequence

try:
    from .errors import ProfileConflict
    from .graph import ProvenanceGraph, build_graph
    from .logger import get_logger
    from .model import (
        EXEC_FAMILY,
        READ_FAMILY,
        Event,
        ExecutionUnit,
        FileEntity,
        ProcessEntity,
        QueueEntity,
        SocketEntity,
        UnitState,
    )
    from .network_utils import is_loopback
    from .profiles import AppProfile, BuiltinRule, select_profile
    from .signature import MatchCursor, MatchResult, match_step, unit_key_value
except ImportError:  # pragma: no cover
    from errors import ProfileConflict  # type: ignore
    from graph import ProvenanceGraph, build_graph  # type: ignore
    from logger import get_logger  # type: ignore
    from model import (  # type: ignore
        EXEC_FAMILY,
        READ_FAMILY,
        Event,
        ExecutionUnit,
        FileEntity,
        ProcessEntity,
        QueueEntity,
        SocketEntity,
        UnitState,
    )
    from network_utils import is_loopback  # type: ignore
    from profiles import AppProfile, BuiltinRule, select_profile  # type: ignore
    from signature import MatchCursor, MatchResult, match_step, unit_key_value  # type: ignore

logger = get_logger("provtrace.partition")

PREAMBLE_KEY = "preamble"


class UnitIndex:
    """Answers which unit an event belongs to and which unit was active in a group at a seq."""

    def __init__(
        self,
        assignment: Mapping[int, int],
        owners: Mapping[int, int],
        timelines: Mapping[int, tuple[Sequence[int], Sequence[int]]] | None = None,
    ):
        self.assignment = dict(assignment)
        self.owners = dict(owners)
        if timelines is None:
            timelines = _timelines_from(self.assignment, self.owners)
        self.timelines = {pgid: (list(seqs), list(ids)) for pgid, (seqs, ids) in timelines.items()}

    def unit_of(self, seq: int) -> int | None:
        return self.assignment.get(seq)

    def owner(self, unit_id: int) -> int:
        return self.owners[unit_id]

    def is_partitioned(self, pgid: int) -> bool:
        return pgid in self.timelines

    def active_unit(self, pgid: int, seq: int) -> int | None:
        unit = self.assignment.get(seq)
        if unit is not None and self.owners.get(unit) == pgid:
            return unit
        timeline = self.timelines.get(pgid)
        if timeline is None:
            return None
        seqs, ids = timeline
        index = bisect_right(seqs, seq) - 1
        return ids[index] if index >= 0 else None


def _timelines_from(assignment: Mapping[int, int], owners: Mapping[int, int]):
    """Activation timeline per group, read off a plain seq -> unit map."""
    timelines: dict[int, tuple[list[int], list[int]]] = {}
    for seq in sorted(assignment):
        unit = assignment[seq]
        seqs, ids = timelines.setdefault(owners[unit], ([], []))
        if not ids or ids[-1] != unit:
            seqs.append(seq)
            ids.append(unit)
    return timelines


class Partition(UnitIndex):
    """Unit registry plus seq assignment for every partitioned process group."""

    def __init__(
        self,
        units: Mapping[int, ExecutionUnit],
        assignment: Mapping[int, int],
        timelines: Mapping[int, tuple[Sequence[int], Sequence[int]]],
        profiles: Mapping[int, str],
    ):
        self.units = dict(units)
        super().__init__(assignment, {uid: unit.owner_pgid for uid, unit in self.units.items()}, timelines)
        self.profiles = dict(profiles)

    def units_of(self, pgid: int) -> list[ExecutionUnit]:
        return [unit for unit in self.units.values() if unit.owner_pgid == pgid]

    def provenance_union(self) -> frozenset[int]:
        result: set[int] = set()
        for unit in self.units.values():
            result |= unit.provenance
        return frozenset(result)


# --- online partitioning -----------------------------------------------------------------


@dataclass
class _Draft:
    key: str
    seqs: list[int] = field(default_factory=list)


@dataclass
class _Group:
    pgid: int
    profile: AppProfile
    first_seq: int
    drafts: list[_Draft] = field(default_factory=list)
    by_key: dict[str, int] = field(default_factory=dict)
    active: int = 0
    cursors: dict[str, MatchCursor] = field(default_factory=dict)
    saved: dict[int, dict[str, MatchCursor]] = field(default_factory=dict)
    timeline_seqs: list[int] = field(default_factory=list)
    timeline_units: list[int] = field(default_factory=list)
    # events of this group in order, with the ordinal each is assigned to
    seqs: list[int] = field(default_factory=list)
    ordinals: list[int] = field(default_factory=list)
    last_boundary: int = -1
    pids: set[int] = field(default_factory=set)
    leader_exited: bool = False
    anonymous: int = 0

    def __post_init__(self):
        self.drafts.append(_Draft(PREAMBLE_KEY))
        self.by_key[PREAMBLE_KEY] = 0
        self.timeline_seqs.append(self.first_seq)
        self.timeline_units.append(0)
        self.cursors = _fresh_cursors(self.profile)


def _fresh_cursors(profile: AppProfile) -> dict[str, MatchCursor]:
    if profile.rule is not None:
        return {}
    return {role: MatchCursor() for role, sig in (("start", profile.unit_start), ("switch", profile.unit_switch)) if sig}


class _Partitioner:
    def __init__(self, profiles: Sequence[AppProfile], graph: ProvenanceGraph, gap_budget: int | None):
        self.profiles = list(profiles)
        self.graph = graph
        self.gap_budget = gap_budget
        self.groups: dict[int, _Group] = {}
        self.unpartitioned: set[int] = set()

    def feed(self, event: Event):
        group = self.groups.get(event.pgid)
        if group is None:
            if event.pgid in self.unpartitioned:
                return
            profile = select_profile(self.profiles, event.comm)
            if profile is None:
                self.unpartitioned.add(event.pgid)
                logger.debug(f"pgid {event.pgid} ({event.comm}): no profile, left whole")
                return
            logger.debug(f"pgid {event.pgid} ({event.comm}): profile '{profile.name}'")
            group = _Group(event.pgid, profile, event.seq)
            group.pids.add(event.pid)
            self.groups[event.pgid] = group
        elif event.pid not in group.pids or event.syscall in EXEC_FAMILY:
            group.pids.add(event.pid)
            other = select_profile(self.profiles, event.comm)
            if other is not None and other.name != group.profile.name:
                raise ProfileConflict(event.pgid, group.profile.name, other.name)

        self._boundaries(group, event)
        group.seqs.append(event.seq)
        group.ordinals.append(group.active)

        if event.pid == group.pgid and (
            event.syscall == "exit_group" or (event.syscall == "exit" and event.tid == event.pid)
        ):
            group.leader_exited = True

    def _boundaries(self, group: _Group, event: Event):
        profile = group.profile
        rule = profile.rule
        if rule is not None:
            key = rule_key(rule, event, self.graph)
            if key is not None:
                self._activate(group, key, event.seq, event.seq)
            return
        gap_budget = profile.gap_budget if profile.gap_budget is not None else self.gap_budget
        dclass_of = self.graph.descriptor_classes.get
        for role, sig in (("start", profile.unit_start), ("switch", profile.unit_switch)):
            if sig is None:
                continue
            cursor = group.cursors[role]
            result = match_step(cursor, event, sig, gap_budget=gap_budget, dclass_of=dclass_of)
            if result is not MatchResult.COMPLETE:
                continue
            match = cursor.last_match
            key = unit_key_value(sig, match)
            if key is None:
                if role == "switch":
                    continue
                group.anonymous += 1
                key = f"unit-{group.anonymous}"
            self._activate(group, key, match[0].seq, event.seq)
            return

    def _activate(self, group: _Group, key: str, first_seq: int, trigger_seq: int):
        ordinal = group.by_key.get(key)
        if ordinal is None:
            ordinal = len(group.drafts)
            group.drafts.append(_Draft(key))
            group.by_key[key] = ordinal
            logger.debug(f"pgid {group.pgid}: new unit {ordinal} ({key}) at seq {trigger_seq}")
        if ordinal == group.active:
            return
        logger.debug(f"pgid {group.pgid}: switch {group.active} -> {ordinal} at seq {trigger_seq}")

        group.saved[group.active] = {role: c.copy() for role, c in group.cursors.items()}
        restored = group.saved.pop(ordinal, None)
        group.cursors = restored if restored is not None else _fresh_cursors(group.profile)
        group.active = ordinal
        previous_boundary, group.last_boundary = group.last_boundary, trigger_seq

        if not group.seqs:
            # boundary on the group's first event: the preamble never ran
            group.timeline_units[-1] = ordinal
            return
        start = max(first_seq, previous_boundary + 1, group.timeline_seqs[-1] + 1)
        group.timeline_seqs.append(start)
        group.timeline_units.append(ordinal)
        i = len(group.seqs) - 1
        while i >= 0 and group.seqs[i] >= start:
            group.ordinals[i] = ordinal
            i -= 1

    def finish(self) -> Partition:
        ids: dict[tuple[int, int], int] = {}
        for pgid in sorted(self.groups):
            for ordinal in range(len(self.groups[pgid].drafts)):
                ids[pgid, ordinal] = len(ids)

        assignment: dict[int, int] = {}
        units: dict[int, ExecutionUnit] = {}
        timelines: dict[int, tuple[list[int], list[int]]] = {}
        profiles: dict[int, str] = {}
        for pgid in sorted(self.groups):
            group = self.groups[pgid]
            profile = group.profile
            profiles[pgid] = profile.name
            for seq, ordinal in zip(group.seqs, group.ordinals):
                group.drafts[ordinal].seqs.append(seq)
                assignment[seq] = ids[pgid, ordinal]
            timelines[pgid] = (group.timeline_seqs, [ids[pgid, o] for o in group.timeline_units])
            for ordinal, draft in enumerate(group.drafts):
                if group.leader_exited:
                    state = UnitState.CLOSED
                elif ordinal == group.active:
                    state = UnitState.ACTIVE
                else:
                    state = UnitState.INACTIVE
                uid = ids[pgid, ordinal]
                unit = ExecutionUnit(uid, pgid, draft.key, ordinal, state, tuple(draft.seqs), profile=profile.name)
                provenance = unit_provenance(unit, self.graph, profile.provenance_seed, profile.seed_glob)
                units[uid] = ExecutionUnit(
                    uid, pgid, draft.key, ordinal, state, tuple(draft.seqs), provenance, profile.name
                )
        return Partition(units, assignment, timelines, profiles)


def partition_events(
    events: Iterable[Event],
    profiles: Sequence[AppProfile],
    graph: ProvenanceGraph | None = None,
    *,
    gap_budget: int | None = None,
) -> Partition:
    events = list(events)
    if graph is None:
        graph = build_graph(events)
    partitioner = _Partitioner(profiles, graph, gap_budget)
    for event in events:
        partitioner.feed(event)
    partition = partitioner.finish()
    logger.info(
        f"Partitioned {len(partitioner.groups)} process group(s) into {len(partition.units)} unit(s); "
        f"{len(partitioner.unpartitioned)} group(s) left whole"
    )
    return partition


# --- built-in rules and provenance ----------------------------------------------------------


def rule_key(rule: BuiltinRule, event: Event, graph: ProvenanceGraph) -> str | None:
    """Unit key selected by a built-in rule for this event, if any."""
    if rule.name == "chrome-recvmsg":
        if event.syscall != "recvmsg":
            return None
        peer = event.arg("peer")
        return None if peer is None else f"peer:{peer}"
    if event.syscall not in READ_FAMILY:
        return None
    edge = graph.edge_at(event.seq)
    if edge is None:
        return None
    source = graph.entity(edge.src)
    if not isinstance(source, FileEntity) or not fnmatchcase(source.path, rule.path_glob or "*"):
        return None
    if rule.name == "inbox-offset":
        return None if source.whole else f"{source.path}@{source.lo}"
    return source.path


def seed_accepts(rule: str, entity, glob: str | None = None) -> bool:
    if rule == "network":
        return (
            isinstance(entity, SocketEntity)
            and entity.remote is not None
            and entity.proto != "unix"
            and not is_loopback(entity.remote)
        )
    if rule == "inbox":
        return isinstance(entity, FileEntity) and not entity.whole and fnmatchcase(entity.path, glob or "*")
    if rule == "chat-log":
        return isinstance(entity, FileEntity) and fnmatchcase(entity.path, glob or "*")
    return isinstance(entity, (FileEntity, SocketEntity, QueueEntity))


def unit_provenance(
    unit: ExecutionUnit,
    graph: ProvenanceGraph,
    rule: str = "inputs",
    glob: str | None = None,
) -> frozenset[int]:
    """Input entities whose flows into the unit's processes fall inside its member seqs."""
    result = set()
    for seq in unit.member_seqs:
        edge = graph.edge_at(seq)
        if edge is None or not isinstance(graph.entity(edge.dst), ProcessEntity):
            continue
        if seed_accepts(rule, graph.entity(edge.src), glob):
            result.add(edge.src)
    return frozenset(result)


def partition_summary(partition: Partition) -> list[dict]:
    """Per profile: process groups, preamble syscalls, unit count and average unit syscalls."""
    rows: dict[str, dict] = {}
    for pgid, name in sorted(partition.profiles.items()):
        row = rows.setdefault(
            name, {"profile": name, "process_groups": 0, "preamble_syscalls": 0, "units": 0, "unit_syscalls": 0}
        )
        row["process_groups"] += 1
        for unit in partition.units_of(pgid):
            if unit.is_preamble:
                row["preamble_syscalls"] += len(unit.member_seqs)
            else:
                row["units"] += 1
                row["unit_syscalls"] += len(unit.member_seqs)
    result = []
    for row in rows.values():
        total = row.pop("unit_syscalls")
        row["avg_unit_syscalls"] = round(total / row["units"], 1) if row["units"] else 0.0
        result.append(row)
    return result
