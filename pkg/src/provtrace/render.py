"""DOT output for causal slices.

Processes are ellipses, files boxes, sockets diamonds and message queues
``cds`` shapes. Edges are numbered by their rank in the slice, processes of
one process group share a ``cluster_<pgid>`` subgraph, and the output only
depends on the slice and the options.
"""

from __future__ import annotations

import hashlib
from collections import Counter
from dataclasses import dataclass
from typing import Optional

try:
    from .forensics import CausalSlice
    from .graph import ProvenanceGraph
    from .model import Entity, FileEntity, ProcessEntity, SocketEntity
    from .partition import UnitIndex
except ImportError:  # pragma: no cover
    from forensics import CausalSlice  # type: ignore
    from graph import ProvenanceGraph  # type: ignore
    from model import Entity, FileEntity, ProcessEntity, SocketEntity  # type: ignore
    from partition import UnitIndex  # type: ignore

SHAPES = {"process": "ellipse", "file": "box", "socket": "diamond", "queue": "cds"}

PALETTE = (
    "#1f77b4",
    "#ff7f0e",
    "#2ca02c",
    "#9467bd",
    "#8c564b",
    "#e377c2",
    "#17becf",
    "#bcbd22",
)

UNTRUSTED_COLOR = "red"


@dataclass(frozen=True)
class RenderOptions:
    cluster_by_pgid: bool = True
    numbered_edges: bool = True
    color_units: bool = False
    max_label: int = 40
    palette: tuple[str, ...] = PALETTE


def quote(text: str) -> str:
    escaped = text.replace("\\", "\\\\").replace('"', '\\"').replace("\n", "\\n").replace("\r", "\\r")
    return f'"{escaped}"'


def node_label(entity: Entity) -> str:
    if isinstance(entity, ProcessEntity):
        pid = f"{entity.pid}#{entity.incarnation}" if entity.incarnation else str(entity.pid)
        return f"{entity.comm or '?'}({pid})"
    if isinstance(entity, FileEntity):
        name = entity.path.rstrip("/").rsplit("/", 1)[-1] or entity.path
        if entity.whole:
            return name
        return f"{name} [{entity.lo},{entity.hi})"
    if isinstance(entity, SocketEntity):
        if entity.remote is not None:
            return entity.remote
        if entity.local is not None:
            return entity.local
        if entity.origin is not None:
            pid, fd, _ = entity.origin
            return f"{entity.proto} {pid}/{fd}"
        return entity.proto
    return f"mq {entity.qid}"


def _labels(graph: ProvenanceGraph, eids: list[int], max_label: int) -> dict[int, str]:
    """Displayed labels; distinct entities that would display the same text get a digest of their identity."""
    shown = {eid: node_label(graph.entity(eid))[:max_label] for eid in eids}
    counts = Counter(shown.values())
    result = {}
    for eid, text in shown.items():
        if counts[text] > 1:
            # repr carries the full path, interval and socket origin
            digest = hashlib.sha1(repr(graph.entity(eid)).encode("utf-8")).hexdigest()[:6]
            text = f"{text[: max(max_label - 7, 1)]}~{digest}"
        result[eid] = text
    return result


def to_dot(
    slice: CausalSlice,
    graph: ProvenanceGraph,
    opts: Optional[RenderOptions] = None,
    units: Optional[UnitIndex] = None,
) -> str:
    opts = opts or RenderOptions()
    lines = ["digraph provenance {"]
    eids = sorted(slice.entities)
    if not eids:
        lines.append("}")
        return "\n".join(lines) + "\n"

    lines.append("  rankdir=LR;")
    lines.append('  node [fontname="Helvetica"];')
    labels = _labels(graph, eids, opts.max_label)

    def node(eid: int, indent: str) -> str:
        entity = graph.entity(eid)
        attrs = [f"label={quote(labels[eid])}", f"shape={SHAPES[entity.kind]}"]
        if eid in slice.untrusted:
            attrs.append(f"color={UNTRUSTED_COLOR}")
            attrs.append(f"fontcolor={UNTRUSTED_COLOR}")
            attrs.append('xlabel="untrusted"')
        return f"{indent}n{eid} [{', '.join(attrs)}];"

    clusters: dict[int, list[int]] = {}
    loose = []
    for eid in eids:
        entity = graph.entity(eid)
        if opts.cluster_by_pgid and isinstance(entity, ProcessEntity):
            clusters.setdefault(entity.pgid, []).append(eid)
        else:
            loose.append(eid)
    for pgid in sorted(clusters):
        lines.append(f"  subgraph cluster_{pgid} {{")
        lines.append(f"    label={quote(f'pgid {pgid}')};")
        lines.append("    style=rounded;")
        lines.extend(node(eid, "    ") for eid in clusters[pgid])
        lines.append("  }")
    lines.extend(node(eid, "  ") for eid in loose)

    for rank, edge in enumerate(slice.edges, start=1):
        attrs = []
        if opts.numbered_edges:
            attrs.append(f'label="{rank}"')
        if opts.color_units:
            unit = units.unit_of(edge.seq) if units is not None else edge.unit
            if unit is not None:
                attrs.append(f'color="{opts.palette[unit % len(opts.palette)]}"')
        suffix = f" [{', '.join(attrs)}]" if attrs else ""
        lines.append(f"  n{edge.src} -> n{edge.dst}{suffix};")
        if edge.prior is not None and edge.prior in slice.entities:
            lines.append(f"  n{edge.prior} -> n{edge.dst} [style=dashed];")

    files = [eid for eid in eids if isinstance(graph.entity(eid), FileEntity)]
    for i, a in enumerate(files):
        for b in files[i + 1 :]:
            if b in graph.aliases(a):
                lines.append(f"  n{a} -> n{b} [style=dotted, dir=none, constraint=false];")

    lines.append("}")
    return "\n".join(lines) + "\n"
