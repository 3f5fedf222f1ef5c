"""Tests for descriptor tracking and flow-edge construction."""

import networkx as nx
import pytest

from conftest import ev
from provtrace.errors import EntitySpecError, InvariantViolation, OutOfOrderSeq
from provtrace.graph import GraphBuilder, ProvenanceGraph, build_graph
from provtrace.ingest import read_trace
from provtrace.model import FileEntity, FlowEdge, ProcessEntity, QueueEntity, SocketEntity


def _kinds(graph):
    return [edge.kind for edge in graph.edges]


def test_empty_trace_gives_empty_graph():
    graph = build_graph([])
    assert len(graph) == 0
    assert graph.edges == ()
    assert graph.diagnostics == ()


@pytest.mark.parametrize("name, fmt", [("six_events.pt", "pipe"), ("six_events.jsonl", "jsonl")])
def test_six_event_fixture(fixtures_dir, name, fmt):
    with open(fixtures_dir / name, "rb") as fh:
        graph = build_graph(read_trace(fh, fmt))
    assert len(graph.entities) == 4
    assert _kinds(graph) == ["read", "fork", "sendto"]
    assert graph.diagnostics == ()
    assert graph.entity(0) == FileEntity("/etc/passwd", 0, 100)
    assert graph.entity(1) == ProcessEntity(42, 0)
    assert graph.entity(2) == ProcessEntity(43, 0)
    assert isinstance(graph.entity(3), SocketEntity)
    assert graph.entity(3).remote == "198.51.100.7:53"


def test_read_creates_offset_interval():
    graph = build_graph(
        [
            ev(1, 5, "open", {"path": "/etc/passwd"}, 3),
            ev(2, 5, "read", {"fd": 3, "count": 100}, 100),
        ]
    )
    edge = graph.edges[0]
    assert graph.entity(edge.src) == FileEntity("/etc/passwd", 0, 100)
    assert graph.entity(edge.dst) == ProcessEntity(5, 0)


def test_lseek_moves_the_interval():
    graph = build_graph(
        [
            ev(1, 5, "open", {"path": "/mail/INBOX"}, 3),
            ev(2, 5, "lseek", {"fd": 3, "offset": 4096, "whence": "SEEK_SET"}, 4096),
            ev(3, 5, "read", {"fd": 3, "count": 512}, 512),
        ]
    )
    assert graph.entity(graph.edges[0].src) == FileEntity("/mail/INBOX", 4096, 4608)


def test_contiguous_reads_keep_their_own_intervals():
    graph = build_graph(
        [
            ev(1, 5, "open", {"path": "/a"}, 3),
            ev(2, 5, "read", {"fd": 3, "count": 10}, 10),
            ev(3, 5, "read", {"fd": 3, "count": 10}, 10),
        ]
    )
    files = [e for e in graph.entities if isinstance(e, FileEntity)]
    assert files == [FileEntity("/a", 0, 10), FileEntity("/a", 10, 20)]
    assert graph.entity(graph.edges[0].src) == FileEntity("/a", 0, 10)
    assert graph.entity(graph.edges[1].src) == FileEntity("/a", 10, 20)


def test_rereading_same_bytes_reuses_the_interval():
    graph = build_graph(
        [
            ev(1, 5, "open", {"path": "/a"}, 3),
            ev(2, 5, "read", {"fd": 3, "count": 10}, 10),
            ev(3, 5, "lseek", {"fd": 3, "offset": 0}, 0),
            ev(4, 5, "read", {"fd": 3, "count": 10}, 10),
        ]
    )
    assert graph.edges[0].src == graph.edges[1].src
    assert [e for e in graph.entities if isinstance(e, FileEntity)] == [FileEntity("/a", 0, 10)]


def test_zero_byte_read_uses_whole_file():
    graph = build_graph([ev(1, 5, "open", {"path": "/a"}, 3), ev(2, 5, "read", {"fd": 3, "count": 10}, 0)])
    assert graph.entity(graph.edges[0].src) == FileEntity("/a")


def test_pwrite_uses_explicit_offset():
    graph = build_graph(
        [
            ev(1, 5, "open", {"path": "/db"}, 3),
            ev(2, 5, "pwrite", {"fd": 3, "count": 8, "offset": 64}, 8),
        ]
    )
    assert graph.entity(graph.edges[0].dst) == FileEntity("/db", 64, 72)


def test_fork_copies_descriptor_table():
    builder = GraphBuilder()
    builder.feed(
        [
            ev(1, 5, "open", {"path": "/etc/hosts"}, 3),
            ev(2, 5, "fork", {}, 6),
        ]
    )
    assert builder.descriptors(6) == builder.descriptors(5)
    builder.apply(ev(3, 6, "read", {"fd": 3, "count": 10}, 10, pgid=5))
    graph = builder.finish()
    assert _kinds(graph) == ["fork", "read"]
    assert graph.edges[0].src == graph.find(ProcessEntity(5, 0))
    assert graph.edges[0].dst == graph.find(ProcessEntity(6, 0))
    assert graph.diagnostics == ()


def test_thread_clone_creates_no_edge():
    graph = build_graph([ev(1, 5, "clone", {"flags": "CLONE_VM|CLONE_THREAD"}, 7)])
    assert graph.edges == ()


def test_execve_twice_gives_two_incarnations_linked_by_exec():
    graph = build_graph(
        [
            ev(1, 9, "open", {"path": "/x"}, 3),
            ev(2, 9, "execve", {"path": "/bin/sh"}, 0, comm="sh"),
            ev(3, 9, "execve", {"path": "/usr/bin/git"}, 0, comm="git"),
        ]
    )
    procs = [e for e in graph.entities if isinstance(e, ProcessEntity)]
    assert procs == [ProcessEntity(9, 0), ProcessEntity(9, 1), ProcessEntity(9, 2)]
    first, second = graph.edges
    assert graph.entity(first.src) == FileEntity("/bin/sh")
    assert first.prior == graph.find(ProcessEntity(9, 0))
    assert second.prior == graph.find(ProcessEntity(9, 1))
    assert graph.entity(second.dst).comm == "git"


def test_exec_as_first_event_has_no_prior():
    graph = build_graph([ev(1, 9, "execve", {"path": "/bin/sh"}, 0)])
    assert graph.edges[0].prior is None
    assert graph.entity(graph.edges[0].dst) == ProcessEntity(9, 0)


def test_unknown_descriptor_is_a_diagnostic_with_synthetic_entity():
    graph = build_graph([ev(1, 5, "read", {"fd": 8, "count": 4}, 4)])
    assert len(graph.edges) == 1
    assert [d.kind for d in graph.diagnostics] == ["unknown-descriptor"]
    assert graph.entity(graph.edges[0].src).path.startswith("?fd/5")


def test_failed_calls_and_missing_args():
    graph = build_graph(
        [
            ev(1, 5, "read", {"fd": 3}, -9),
            ev(2, 5, "read", {"count": 4}, 4),
            ev(3, 5, "fork", {}, -11),
        ]
    )
    assert graph.edges == ()
    assert [d.kind for d in graph.diagnostics] == ["failed-call", "missing-argument", "failed-call"]


def test_socket_connect_and_send():
    graph = build_graph(
        [
            ev(1, 5, "socket", {"domain": "AF_INET", "type": "SOCK_STREAM"}, 4),
            ev(2, 5, "connect", {"fd": 4, "addr": "198.51.100.7:443", "laddr": "10.0.0.5:40000"}, 0),
            ev(3, 5, "send", {"fd": 4, "count": 20}, 20),
            ev(4, 5, "recv", {"fd": 4, "count": 100}, 100),
        ]
    )
    sock = SocketEntity("10.0.0.5:40000", "198.51.100.7:443", "tcp")
    assert graph.find(sock) is not None
    send, recv = graph.edges
    assert send.dst == recv.src == graph.find(sock)
    assert graph.is_external(graph.find(sock))
    assert graph.descriptor_classes[3] == "socket"


def test_socketpair_is_an_internal_pipe():
    graph = build_graph(
        [
            ev(1, 5, "socketpair", {"fd0": 3, "fd1": 4}, 0),
            ev(2, 5, "fork", {}, 6),
            ev(3, 6, "write", {"fd": 4, "count": 8}, 8, pgid=5),
            ev(4, 5, "read", {"fd": 3, "count": 8}, 8),
        ]
    )
    write, read = graph.edges[1:]
    assert write.dst == read.src
    sock = graph.entity(write.dst)
    assert sock.proto == "unix"
    assert not graph.is_external(write.dst)
    assert graph.descriptor_classes[4] == "pipe"


def test_message_queue_flow():
    graph = build_graph(
        [
            ev(1, 5, "msgsnd", {"qid": 7}, 0),
            ev(2, 6, "msgrcv", {"qid": 7}, 16),
        ]
    )
    send, recv = graph.edges
    assert graph.entity(send.dst) == QueueEntity(7)
    assert recv.src == send.dst


def test_wait_flows_from_child_to_parent():
    graph = build_graph([ev(1, 5, "fork", {}, 6), ev(2, 6, "exit", {}, 0, pgid=5), ev(3, 5, "wait", {}, 6)])
    wait = graph.edges[1]
    assert graph.entity(wait.src) == ProcessEntity(6, 0)
    assert graph.entity(wait.dst) == ProcessEntity(5, 0)


def test_pid_reuse_after_exit_is_a_new_incarnation():
    graph = build_graph(
        [
            ev(1, 5, "open", {"path": "/a"}, 3),
            ev(2, 5, "read", {"fd": 3, "count": 1}, 1),
            ev(3, 5, "exit_group", {}, 0),
            ev(4, 5, "open", {"path": "/b"}, 3),
            ev(5, 5, "read", {"fd": 3, "count": 1}, 1),
        ]
    )
    assert graph.entity(graph.edges[1].dst) == ProcessEntity(5, 1)


def test_builder_rejects_out_of_order_events():
    builder = GraphBuilder()
    builder.apply(ev(2, 5, "open", {"path": "/a"}, 3))
    with pytest.raises(OutOfOrderSeq):
        builder.apply(ev(2, 5, "open", {"path": "/b"}, 4))


def test_streaming_equals_batch():
    events = [
        ev(1, 5, "open", {"path": "/a"}, 3),
        ev(2, 5, "read", {"fd": 3, "count": 4}, 4),
        ev(3, 5, "fork", {}, 6),
        ev(4, 6, "write", {"fd": 3, "count": 4}, 4, pgid=5),
        ev(5, 5, "read", {"fd": 3, "count": 4}, 4),
    ]
    batch = build_graph(events)
    builder = GraphBuilder()
    for chunk in (events[:2], events[2:3], events[3:]):
        builder.feed(chunk)
    streamed = builder.finish()
    assert streamed.entities == batch.entities
    assert streamed.edges == batch.edges


class TestProvenanceGraph:
    @pytest.fixture
    def graph(self):
        return build_graph(
            [
                ev(1, 5, "open", {"path": "/a"}, 3),
                ev(2, 5, "read", {"fd": 3, "count": 10}, 10),
                ev(3, 5, "lseek", {"fd": 3, "offset": 5}, 5),
                ev(4, 5, "read", {"fd": 3, "count": 10}, 10),
                ev(5, 5, "open", {"path": "/b"}, 4),
                ev(6, 5, "write", {"fd": 4, "count": 3}, 3),
            ]
        )

    def test_between_queries_are_half_open(self, graph):
        proc = graph.find(ProcessEntity(5, 0))
        assert [e.seq for e in graph.incoming_between(proc, 2, 4)] == [2]
        assert [e.seq for e in graph.incoming_between(proc, 0, 100)] == [2, 4]
        assert [e.seq for e in graph.outgoing_between(proc, 6, 7)] == [6]

    def test_digraph_view(self, graph):
        view = graph.digraph
        assert view.number_of_nodes() == len(graph)
        assert sorted(key for _, _, key in view.edges(keys=True)) == [2, 4, 6]
        proc = graph.find(ProcessEntity(5, 0))
        assert view.in_degree(proc) == 2
        assert view.nodes[proc]["entity"] == ProcessEntity(5, 0)
        assert nx.descendants(view, graph.find(FileEntity("/a", 0, 10))) == {proc, graph.find(FileEntity("/b", 0, 3))}
        with pytest.raises(nx.NetworkXError):
            view.add_node(99)

    def test_roots_count_flows_into_aliases(self, graph):
        first = graph.find(FileEntity("/a", 0, 10))
        second = graph.find(FileEntity("/a", 5, 15))
        proc = graph.find(ProcessEntity(5, 0))
        assert graph.roots({first, second, proc}, [graph.edge_at(2)]) == (first, second)
        assert graph.roots({first, proc}, []) == tuple(sorted((first, proc)))

    def test_aliases_cover_overlapping_intervals(self, graph):
        first = graph.find(FileEntity("/a", 0, 10))
        second = graph.find(FileEntity("/a", 5, 15))
        assert set(graph.aliases(first)) == {first, second}
        other = graph.find(FileEntity("/b", 0, 3))
        assert graph.aliases(other) == (other,)

    def test_resolve(self, graph):
        assert graph.resolve("proc:5") == graph.find(ProcessEntity(5, 0))
        assert graph.resolve("file:/a@5,15") == graph.find(FileEntity("/a", 5, 15))
        with pytest.raises(EntitySpecError):
            graph.resolve("file:/a")
        assert graph.resolve("file:/a", at_seq=2) == graph.find(FileEntity("/a", 0, 10))
        with pytest.raises(EntitySpecError):
            graph.resolve("proc:77")

    def test_annotate_sets_units(self, graph):
        annotated = graph.annotate(lambda seq: seq % 2)
        assert [e.unit for e in annotated.edges] == [0, 0, 0]
        assert all(e.unit is None for e in graph.edges)

    def test_summary(self, graph):
        assert graph.summary() == {
            "entities": 4,
            "edges": 3,
            "diagnostics": 0,
            "entity_kinds": {"file": 3, "process": 1},
        }

    def test_constructor_checks_invariants(self):
        with pytest.raises(InvariantViolation):
            ProvenanceGraph([ProcessEntity(1)], [FlowEdge(0, 1, 1, 1, "read")])
        with pytest.raises(InvariantViolation):
            ProvenanceGraph(
                [ProcessEntity(1), FileEntity("/a")],
                [FlowEdge(1, 0, 2, 1, "read"), FlowEdge(1, 0, 1, 1, "read")],
            )
