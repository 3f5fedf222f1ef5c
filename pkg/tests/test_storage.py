"""Tests for the JSON-lines graph dump."""

import io
import json

import pytest

from conftest import ev
from provtrace.errors import DumpFormatError
from provtrace.forensics import backtrack, resolve_seed
from provtrace.graph import build_graph
from provtrace.ingest import read_trace, read_trace_text
from provtrace.partition import partition_events
from provtrace.profiles import builtin_profiles
from provtrace.scenario import ScenarioSpec, generate
from provtrace.storage import DUMP_FORMAT, DUMP_VERSION, Dump, dumps, read_dump, write_dump


@pytest.fixture
def six_event_dump(fixtures_dir):
    with open(fixtures_dir / "six_events.pt", "rb") as fh:
        events = list(read_trace(fh))
    return Dump(events, build_graph(events))


def test_header_and_record_order(six_event_dump):
    lines = dumps(six_event_dump).splitlines()
    assert json.loads(lines[0]) == {"format": DUMP_FORMAT, "version": DUMP_VERSION}
    types = [json.loads(line)["type"] for line in lines[1:]]
    assert types == ["event"] * 6 + ["entity"] * 4 + ["edge"] * 3 + ["dclass"] * 3


def test_dump_is_byte_identical_across_runs(six_event_dump, fixtures_dir):
    with open(fixtures_dir / "six_events.pt", "rb") as fh:
        events = list(read_trace(fh))
    again = Dump(events, build_graph(events))
    assert dumps(six_event_dump) == dumps(again)


def test_read_back_graph(six_event_dump, tmp_path):
    path = tmp_path / "graph.dump"
    write_dump(six_event_dump, path)
    loaded = read_dump(path)
    assert loaded.events == six_event_dump.events
    assert loaded.graph.entities == six_event_dump.graph.entities
    assert loaded.graph.edges == six_event_dump.graph.edges
    assert loaded.graph.descriptor_classes == six_event_dump.graph.descriptor_classes
    assert loaded.partition is None
    assert loaded.slice is None
    assert dumps(loaded) == dumps(six_event_dump)


def test_partition_and_slice_survive_the_dump():
    trace, truth = generate(ScenarioSpec("csrf", benign_units=3, events_per_unit=60, preamble_events=20, seed=4))
    events, _ = read_trace_text(trace)
    graph = build_graph(events)
    partition = partition_events(events, builtin_profiles(), graph)
    causal = backtrack(graph, partition, resolve_seed(graph, truth.seed))
    text = dumps(Dump(events, graph, partition, causal))

    loaded = read_dump(io.StringIO(text))
    assert loaded.partition.units == partition.units
    assert loaded.partition.assignment == partition.assignment
    assert loaded.partition.timelines == partition.timelines
    assert loaded.slice.entities == causal.entities
    assert loaded.slice.root_candidates == causal.root_candidates
    assert loaded.slice.seed == causal.seed
    assert [e.seq for e in loaded.slice.edges] == [e.seq for e in causal.edges]
    assert all(edge.unit == partition.unit_of(edge.seq) for edge in loaded.graph.edges)
    assert dumps(loaded) == text
    edge_units = [json.loads(line).get("unit") for line in text.splitlines()[1:] if '"type":"edge"' in line]
    assert any(unit is not None for unit in edge_units)


@pytest.mark.parametrize(
    "text, message",
    [
        ("", "Empty"),
        ("not json\n", "not JSON"),
        ('{"format":"other","version":1}\n', "missing format header"),
        ('{"format":"provtrace-dump","version":99}\n', "version"),
        ('{"format":"provtrace-dump","version":1}\n{"type":"mystery"}\n', "unknown record type"),
        ('{"format":"provtrace-dump","version":1}\n{"type":"entity","id":0,"kind":"disk"}\n', "entity kind"),
        ('{"format":"provtrace-dump","version":1}\n{"type":"entity","id":1,"kind":"queue","qid":3}\n', "contiguous"),
        ('{"format":"provtrace-dump","version":1}\n{"type":"edge","src":0}\n', "line 2"),
    ],
)
def test_malformed_dumps(text, message):
    with pytest.raises(DumpFormatError, match=message):
        read_dump(io.StringIO(text))


def test_inconsistent_edges_are_rejected():
    text = (
        '{"format":"provtrace-dump","version":1}\n'
        '{"type":"entity","id":0,"kind":"queue","qid":3}\n'
        '{"type":"edge","src":0,"dst":5,"seq":1,"ts":1,"kind":"msgrcv"}\n'
    )
    with pytest.raises(DumpFormatError, match="Inconsistent graph"):
        read_dump(io.StringIO(text))


def test_slice_referencing_missing_edge():
    graph = build_graph([ev(1, 5, "msgsnd", {"qid": 1}, 0)])
    text = dumps(Dump([], graph))
    text += '{"direction":"backward","edges":[99],"entities":[0],"roots":[0],"seed":[0,1],"type":"slice","untrusted":[]}\n'
    with pytest.raises(DumpFormatError, match="missing"):
        read_dump(io.StringIO(text))
