"""Backward root-cause and forward impact tracking over the provenance graph.

Both traversals carry a per-path seq bound: an entity reached through an edge
at seq ``t`` expands only edges before ``t`` (backward) or after ``t``
(forward). Inside a partitioned process group a flow into a process and a
later flow out of it are chained only when the incoming edge belongs to the
unit active at the outgoing edge, or to another group. Both directions apply
the same test, so a forward slice from a backward slice's root reaches the
seed again.
"""

from __future__ import annotations

import sys
from collections import deque
from dataclasses import dataclass, replace
from typing import Iterable, Literal

try:
    from .errors import EntitySpecError, InvalidSeed
    from .graph import ProvenanceGraph
    from .logger import get_logger
    from .model import FlowEdge, ProcessEntity, SocketEntity
    from .network_utils import Network, is_trusted, parse_networks
    from .partition import Partition, UnitIndex
except ImportError:  # pragma: no cover
    from errors import EntitySpecError, InvalidSeed  # type: ignore
    from graph import ProvenanceGraph  # type: ignore
    from logger import get_logger  # type: ignore
    from model import FlowEdge, ProcessEntity, SocketEntity  # type: ignore
    from network_utils import Network, is_trusted, parse_networks  # type: ignore
    from partition import Partition, UnitIndex  # type: ignore

logger = get_logger("provtrace.forensics")

Direction = Literal["backward", "forward", "both"]


@dataclass(frozen=True)
class SeedPoint:
    entity: int
    at_seq: int


@dataclass(frozen=True)
class CausalSlice:
    entities: frozenset[int]
    edges: tuple[FlowEdge, ...]
    root_candidates: tuple[int, ...]
    seed: SeedPoint
    direction: Direction = "backward"
    untrusted: frozenset[int] = frozenset()

    def __len__(self) -> int:
        return len(self.edges)


def _validate_seed(graph: ProvenanceGraph, seed: SeedPoint):
    if not (0 <= seed.entity < len(graph)):
        raise InvalidSeed(f"Seed entity {seed.entity} does not exist")
    edge = graph.edge_at(seed.at_seq)
    if edge is None:
        raise InvalidSeed(f"No flow edge at seq {seed.at_seq}")
    touching = {edge.dst, *edge.sources}
    if not touching.intersection(graph.aliases(seed.entity)):
        raise InvalidSeed(f"Edge at seq {seed.at_seq} does not touch entity {seed.entity}")


class _Walker:
    def __init__(self, graph: ProvenanceGraph, units: UnitIndex | None):
        self.graph = graph
        self.units = units

    def constraint(self, eid: int, seq: int) -> int | None:
        """Unit active in ``eid``'s group at ``seq``; None outside partitioned processes."""
        entity = self.graph.entity(eid)
        if self.units is None or not isinstance(entity, ProcessEntity):
            return None
        if not self.units.is_partitioned(entity.pgid):
            return None
        return self.units.active_unit(entity.pgid, seq)

    def unit_of(self, edge: FlowEdge) -> int | None:
        return None if self.units is None else self.units.unit_of(edge.seq)

    def admits(self, incoming: int | None, active: int | None) -> bool:
        """Whether a flow tagged ``incoming`` into a process reaches its later activity in unit ``active``."""
        if incoming is None or active is None or incoming == active:
            return True
        return self.units.owner(incoming) != self.units.owner(active)

    def walk(self, start: int, bound: int, tag: int | None, backward: bool):
        """Worklist over the graph's edge views.

        Backward, ``tag`` is the unit active in the process where the path
        leaves it and each incoming edge's unit is checked against it. Forward,
        ``tag`` is the unit of the edge that entered the process and it is
        checked against the unit active at each outgoing edge's own seq.
        """
        graph = self.graph
        # best bound explored per (entity, tag); a looser bound dominates
        best: dict[tuple[int, int | None], int] = {}
        entities = {start}
        edges: dict[int, FlowEdge] = {}
        queue = deque([(start, bound, tag)])
        while queue:
            eid, bound, tag = queue.popleft()
            state = (eid, tag)
            known = best.get(state)
            if known is not None and (bound <= known if backward else bound >= known):
                continue
            best[state] = bound
            if eid != start and graph.is_external(eid):
                continue
            for alias in graph.aliases(eid):
                if backward:
                    candidates = graph.incoming_between(alias, 0, bound)
                else:
                    candidates = graph.outgoing_between(alias, bound + 1, sys.maxsize)
                for edge in candidates:
                    if backward:
                        admitted = self.admits(self.unit_of(edge), tag)
                    else:
                        admitted = self.admits(tag, self.constraint(eid, edge.seq))
                    if not admitted:
                        continue
                    edges[edge.seq] = edge
                    entities.add(edge.dst)
                    entities.update(edge.sources)
                    for nxt in edge.sources if backward else (edge.dst,):
                        queue.append((nxt, edge.seq, self._next_tag(nxt, edge, backward)))
        ordered = tuple(edges[seq] for seq in sorted(edges))
        return frozenset(entities), ordered

    def _next_tag(self, eid: int, edge: FlowEdge, backward: bool) -> int | None:
        if backward:
            return self.constraint(eid, edge.seq)
        entity = self.graph.entity(eid)
        if self.units is None or not isinstance(entity, ProcessEntity) or not self.units.is_partitioned(entity.pgid):
            return None
        return self.unit_of(edge)


def backtrack(graph: ProvenanceGraph, units: UnitIndex | None, seed: SeedPoint) -> CausalSlice:
    """Time- and unit-respecting reverse reachability from a detection point."""
    _validate_seed(graph, seed)
    walker = _Walker(graph, units)
    entities, edges = walker.walk(seed.entity, seed.at_seq + 1, walker.constraint(seed.entity, seed.at_seq), True)
    roots = graph.roots(entities, edges)
    logger.info(f"Backward slice: {len(edges)} edge(s), {len(entities)} entities, {len(roots)} root candidate(s)")
    return CausalSlice(entities, edges, roots, seed, "backward")


def forward_track(graph: ProvenanceGraph, units: UnitIndex | None, root: int, from_seq: int = 0) -> CausalSlice:
    """Everything the root can have influenced through edges after ``from_seq``."""
    if not (0 <= root < len(graph)):
        raise InvalidSeed(f"Root entity {root} does not exist")
    walker = _Walker(graph, units)
    entities, edges = walker.walk(root, from_seq, None, False)
    logger.info(f"Forward slice: {len(edges)} edge(s), {len(entities)} entities")
    return CausalSlice(entities, edges, graph.roots(entities, edges), SeedPoint(root, from_seq), "forward")


def whole_graph(graph: ProvenanceGraph) -> CausalSlice:
    """The entire graph as a slice, for rendering dumps that carry no traversal."""
    entities = frozenset(range(len(graph)))
    edges = tuple(graph.edges)
    return CausalSlice(entities, edges, graph.roots(entities, edges), SeedPoint(-1, 0), "both")


def merge_slices(graph: ProvenanceGraph, first: CausalSlice, second: CausalSlice) -> CausalSlice:
    """Union of two slices (typically backward then forward from the root found)."""
    edges = {edge.seq: edge for edge in first.edges}
    edges.update((edge.seq, edge) for edge in second.edges)
    ordered = tuple(edges[seq] for seq in sorted(edges))
    entities = first.entities | second.entities
    return CausalSlice(
        entities,
        ordered,
        graph.roots(entities, ordered),
        first.seed,
        "both",
        first.untrusted | second.untrusted,
    )


def slice_stats(slice: CausalSlice, graph: ProvenanceGraph) -> dict:
    total = len(graph.edges)
    ratio = 1 - len(slice.edges) / total if total else 0.0
    return {
        "slice_edges": len(slice.edges),
        "slice_entities": len(slice.entities),
        "total_edges": total,
        "reduction_ratio": ratio,
    }


def tag_untrusted(
    slice: CausalSlice,
    graph: ProvenanceGraph,
    networks: list[Network] | None = None,
) -> CausalSlice:
    """Flag root candidates that are sockets to addresses outside the trusted networks."""
    if networks is None:
        networks = parse_networks()
    flagged = set()
    for eid in slice.root_candidates:
        entity = graph.entity(eid)
        if isinstance(entity, SocketEntity) and graph.is_external(eid) and not is_trusted(entity.remote, networks):
            flagged.add(eid)
    return replace(slice, untrusted=frozenset(flagged))


def input_roots(slice: CausalSlice, partition: Partition | Iterable[int]) -> frozenset[int]:
    """Root candidates that some execution unit received as input."""
    provenance = partition.provenance_union() if isinstance(partition, Partition) else frozenset(partition)
    return frozenset(eid for eid in slice.root_candidates if eid in provenance)


def split_seed(text: str) -> tuple[str, int]:
    spec, sep, seq = text.rpartition("@")
    if not sep or not seq.lstrip("-").isdigit():
        raise InvalidSeed(f"Seed '{text}' must look like <entity-spec>@<seq>")
    return spec, int(seq)


def resolve_seed(graph: ProvenanceGraph, text: str) -> SeedPoint:
    spec, seq = split_seed(text)
    try:
        eid = graph.resolve(spec, at_seq=seq)
    except EntitySpecError as exc:
        raise InvalidSeed(str(exc)) from exc
    seed = SeedPoint(eid, seq)
    _validate_seed(graph, seed)
    return seed


def resolve_root(graph: ProvenanceGraph, spec: str) -> int:
    try:
        return graph.resolve(spec)
    except EntitySpecError as exc:
        raise InvalidSeed(str(exc)) from exc
