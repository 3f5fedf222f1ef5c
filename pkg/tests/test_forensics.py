"""Tests for backward and forward tracking, root tagging and seed resolution."""

import random

import networkx as nx
import pytest

from conftest import ev
from provtrace.errors import InvalidSeed
from provtrace.forensics import (
    SeedPoint,
    backtrack,
    forward_track,
    input_roots,
    merge_slices,
    resolve_root,
    resolve_seed,
    slice_stats,
    split_seed,
    tag_untrusted,
    whole_graph,
)
from provtrace.graph import ProvenanceGraph, build_graph
from provtrace.model import FileEntity, FlowEdge, ProcessEntity, SocketEntity
from provtrace.network_utils import parse_networks
from provtrace.partition import UnitIndex, partition_events
from provtrace.profiles import load_profiles

REMOTE = "198.51.100.7:80"
LOCAL = "10.0.0.2:5000"


@pytest.fixture
def download_graph():
    """bash downloads a payload, a child runs it and writes /tmp/out; the parent keeps working."""
    child = {"pgid": 10}
    return build_graph(
        [
            ev(1, 10, "socket", {"domain": "AF_INET", "type": "SOCK_STREAM"}, 3),
            ev(2, 10, "connect", {"fd": 3, "addr": REMOTE, "laddr": LOCAL}, 0),
            ev(3, 10, "read", {"fd": 3, "count": 100}, 100),
            ev(4, 10, "open", {"path": "/tmp/payload"}, 4),
            ev(5, 10, "write", {"fd": 4, "count": 100}, 100),
            ev(6, 10, "fork", {}, 11),
            ev(7, 11, "open", {"path": "/tmp/payload"}, 3, **child),
            ev(8, 11, "read", {"fd": 3, "count": 100}, 100, **child),
            ev(9, 11, "open", {"path": "/tmp/out"}, 5, **child),
            ev(10, 11, "write", {"fd": 5, "count": 10}, 10, **child),
            ev(11, 10, "open", {"path": "/etc/passwd"}, 5),
            ev(12, 10, "read", {"fd": 5, "count": 50}, 50),
            ev(13, 10, "open", {"path": "/tmp/log"}, 6),
            ev(14, 10, "write", {"fd": 6, "count": 20}, 20),
        ]
    )


def _socket(graph):
    return graph.find(SocketEntity(LOCAL, REMOTE))


class TestBacktrack:
    def test_finds_the_download_as_root(self, download_graph):
        graph = download_graph
        causal = backtrack(graph, None, resolve_seed(graph, "file:/tmp/out@10"))
        assert [e.seq for e in causal.edges] == [3, 5, 6, 8, 10]
        assert causal.root_candidates == (_socket(graph),)
        assert causal.direction == "backward"
        assert graph.find(FileEntity("/etc/passwd", 0, 50)) not in causal.entities

    def test_later_flows_are_ignored(self, download_graph):
        graph = download_graph
        proc = graph.find(ProcessEntity(10, 0))
        causal = backtrack(graph, None, SeedPoint(proc, 12))
        assert [e.seq for e in causal.edges] == [3, 12]

    def test_tag_untrusted_root(self, download_graph):
        graph = download_graph
        causal = backtrack(graph, None, resolve_seed(graph, "file:/tmp/out@10"))
        assert tag_untrusted(causal, graph).untrusted == {_socket(graph)}
        assert tag_untrusted(causal, graph, parse_networks(["198.51.100.0/24"])).untrusted == frozenset()

    def test_input_roots_from_ids(self, download_graph):
        graph = download_graph
        causal = backtrack(graph, None, resolve_seed(graph, "file:/tmp/out@10"))
        assert input_roots(causal, {_socket(graph), 99}) == {_socket(graph)}

    def test_stats(self, download_graph):
        graph = download_graph
        causal = backtrack(graph, None, resolve_seed(graph, "file:/tmp/out@10"))
        stats = slice_stats(causal, graph)
        assert stats["slice_edges"] == 5
        assert stats["total_edges"] == 7
        assert stats["reduction_ratio"] == pytest.approx(2 / 7)


class TestForward:
    def test_forward_from_the_root(self, download_graph):
        graph = download_graph
        causal = forward_track(graph, None, _socket(graph))
        assert [e.seq for e in causal.edges] == [3, 5, 6, 8, 10, 14]
        assert causal.direction == "forward"
        assert causal.root_candidates == (_socket(graph),)

    def test_forward_respects_start_seq(self, download_graph):
        graph = download_graph
        proc = graph.find(ProcessEntity(10, 0))
        assert [e.seq for e in forward_track(graph, None, proc, from_seq=6).edges] == [14]

    def test_unknown_root(self, download_graph):
        with pytest.raises(InvalidSeed):
            forward_track(download_graph, None, 999)

    def test_merge(self, download_graph):
        graph = download_graph
        back = backtrack(graph, None, resolve_seed(graph, "file:/tmp/out@10"))
        merged = merge_slices(graph, back, forward_track(graph, None, _socket(graph)))
        assert [e.seq for e in merged.edges] == [3, 5, 6, 8, 10, 14]
        assert merged.direction == "both"
        assert merged.seed == back.seed


class TestSeeds:
    @pytest.mark.parametrize("text", ["file:/tmp/out@9", "file:/tmp/out@8", "file:/nope@10", "file:/tmp/out"])
    def test_invalid_seeds(self, download_graph, text):
        with pytest.raises(InvalidSeed):
            resolve_seed(download_graph, text)

    def test_split_seed_keeps_at_signs_in_paths(self):
        assert split_seed("file:/srv/a@b/log@0,10@42") == ("file:/srv/a@b/log@0,10", 42)

    def test_resolve_root(self, download_graph):
        assert resolve_root(download_graph, "proc:11") == download_graph.find(ProcessEntity(11, 0, 10))
        with pytest.raises(InvalidSeed):
            resolve_root(download_graph, "proc:77")

    def test_seed_entity_must_exist(self, download_graph):
        with pytest.raises(InvalidSeed):
            backtrack(download_graph, None, SeedPoint(500, 10))


def _im(seq, syscall, args, retval=0):
    return ev(seq, 500, syscall, args, retval, comm="im")


@pytest.fixture
def chat_export():
    """Two chats are opened; only the second one's content is exported."""
    events = [
        _im(1, "open", {"path": "/home/u/prefs", "flags": "O_RDONLY"}, 3),
        _im(2, "read", {"fd": 3, "count": 100}, 100),
    ]
    for seq, path, fd in ((3, "/logs/bob", 7), (7, "/logs/carol", 9)):
        events += [
            _im(seq, "open", {"path": path, "flags": "O_RDWR"}, fd),
            _im(seq + 1, "lseek", {"fd": fd, "offset": 0, "whence": "SEEK_SET"}, 0),
            _im(seq + 2, "read", {"fd": fd, "count": 512}, 512),
        ]
    events += [
        _im(6, "write", {"fd": 7, "count": 10}, 10),
        _im(10, "open", {"path": "/tmp/export"}, 12),
        _im(11, "write", {"fd": 12, "count": 50}, 50),
    ]
    events.sort(key=lambda e: e.seq)
    return events


class TestUnitAwareTracking:
    def test_partition_confines_the_slice_to_one_unit(self, chat_export, fixtures_dir):
        graph = build_graph(chat_export)
        partition = partition_events(chat_export, load_profiles(fixtures_dir / "profiles.json"), graph)
        seed = resolve_seed(graph, "file:/tmp/export@11")

        whole = backtrack(graph, None, seed)
        assert [e.seq for e in whole.edges] == [2, 5, 9, 11]

        confined = backtrack(graph, partition, seed)
        assert [e.seq for e in confined.edges] == [9, 11]
        carol = graph.find(FileEntity("/logs/carol", 0, 512))
        assert confined.root_candidates == (carol,)
        assert input_roots(confined, partition) == {carol}

    def test_forward_from_a_unit_input_stays_in_the_unit(self, chat_export, fixtures_dir):
        graph = build_graph(chat_export)
        partition = partition_events(chat_export, load_profiles(fixtures_dir / "profiles.json"), graph)
        bob = graph.find(FileEntity("/logs/bob", 0, 512))
        edges = [e.seq for e in forward_track(graph, partition, bob).edges]
        assert edges == [5, 6]
        assert [e.seq for e in forward_track(graph, None, bob).edges] == [5, 6, 11]


def test_whole_graph_covers_everything(download_graph):
    everything = whole_graph(download_graph)
    assert len(everything) == len(download_graph.edges)
    assert everything.entities == frozenset(range(len(download_graph)))
    assert everything.direction == "both"


def _graph(entities, flows):
    return ProvenanceGraph(entities, [FlowEdge(src, dst, seq, seq, "write") for seq, src, dst in flows])


SOCK_A = SocketEntity(None, "198.51.100.1:80", origin=(1, 3, 0))
SOCK_B = SocketEntity(None, "198.51.100.2:80", origin=(1, 4, 0))
PROC_P = ProcessEntity(1, 0, 1, "p")


class TestSmallGraphs:
    def test_linear_chain(self):
        graph = _graph(
            [SOCK_A, PROC_P, FileEntity("/f"), ProcessEntity(2, 0, 2, "q"), SOCK_B],
            [(1, 0, 1), (2, 1, 2), (3, 2, 3), (4, 3, 4)],
        )
        back = backtrack(graph, None, SeedPoint(4, 4))
        assert [e.seq for e in back.edges] == [1, 2, 3, 4]
        assert back.root_candidates == (0,)
        assert forward_track(graph, None, 0).entities == frozenset(range(5))

    @pytest.fixture
    def two_sockets(self):
        return _graph([SOCK_A, SOCK_B, PROC_P, FileEntity("/f")], [(1, 0, 2), (2, 1, 2), (3, 2, 3)])

    def test_dependency_explosion_without_units(self, two_sockets):
        back = backtrack(two_sockets, None, SeedPoint(3, 3))
        assert back.root_candidates == (0, 1)
        assert 3 in forward_track(two_sockets, None, 0).entities

    def test_units_cut_the_explosion(self, two_sockets):
        units = UnitIndex({1: 0, 2: 1, 3: 1}, {0: 1, 1: 1})
        back = backtrack(two_sockets, units, SeedPoint(3, 3))
        assert back.root_candidates == (1,)
        assert 3 not in forward_track(two_sockets, units, 0).entities

    def test_cycles_terminate(self):
        graph = _graph([PROC_P, FileEntity("/f")], [(seq, seq % 2, 1 - seq % 2) for seq in range(1, 40)])
        back = backtrack(graph, None, SeedPoint(0, 39))
        assert len(back.edges) == 39
        assert back.root_candidates == ()

    def test_stats_of_whole_graph(self, two_sockets):
        assert slice_stats(whole_graph(two_sockets), two_sockets)["reduction_ratio"] == 0


def _random_graph(rng):
    """Random graph over processes, overlapping file intervals and sockets; groups 1 and 2 are partitioned."""
    entities = [ProcessEntity(pid, 0, 1 + pid % 3, "p") for pid in range(1, rng.randint(2, 12))]
    files = set()
    for _ in range(rng.randint(1, 15)):
        path = f"/f{rng.randint(0, 4)}"
        if rng.random() < 0.3:
            files.add(FileEntity(path))
        else:
            lo = rng.randint(0, 40)
            files.add(FileEntity(path, lo, lo + rng.randint(1, 20)))
    entities += sorted(files, key=repr)
    for i in range(rng.randint(0, 8)):
        entities.append(SocketEntity(None, f"198.51.100.{i}:80", origin=(0, i, 0)))
    entities = entities[:50]
    flows = [(seq, *rng.sample(range(len(entities)), 2)) for seq in range(1, rng.randint(2, 80))]
    graph = _graph(entities, flows)

    owners = {0: 1, 1: 1, 2: 1, 3: 2, 4: 2}
    by_group = {1: [0, 1, 2], 2: [3, 4]}
    switch_range = range(0, len(flows) + 2)
    timelines = {}
    for pgid, ids in by_group.items():
        switches = sorted(rng.sample(switch_range, rng.randint(1, min(4, len(switch_range)))))
        timelines[pgid] = (switches, [rng.choice(ids) for _ in switches])
    assignment = {}
    for edge in graph.edges:
        for eid in (edge.src, edge.dst):
            entity = graph.entity(eid)
            if isinstance(entity, ProcessEntity) and entity.pgid in by_group:
                switches, ids = timelines[entity.pgid]
                current = [uid for at, uid in zip(switches, ids) if at <= edge.seq]
                if rng.random() < 0.2:
                    assignment[edge.seq] = rng.choice(by_group[entity.pgid])
                elif current:
                    assignment[edge.seq] = current[-1]
                break
    return graph, UnitIndex(assignment, owners, timelines)


def _active(units, pgid, seq):
    """Unit a group is in at ``seq``: the event's own unit, else its last switch at or before ``seq``."""
    unit = units.assignment.get(seq)
    if unit is not None and units.owners[unit] == pgid:
        return unit
    current = None
    for at, uid in zip(*units.timelines.get(pgid, ((), ()))):
        if at <= seq:
            current = uid
    return current


def _passes(graph, units, eid, incoming, at_seq):
    """Data that reached ``eid`` through a flow in unit ``incoming`` may leave it at ``at_seq``."""
    entity = graph.entity(eid)
    if units is None or not isinstance(entity, ProcessEntity) or entity.pgid not in units.timelines:
        return True
    active = _active(units, entity.pgid, at_seq)
    if incoming is None or active is None or incoming == active:
        return True
    return units.owners[incoming] != units.owners[active]


def _same_bytes(graph, a, b):
    if a == b:
        return True
    first, second = graph.entity(a), graph.entity(b)
    if not (isinstance(first, FileEntity) and isinstance(second, FileEntity)) or first.path != second.path:
        return False
    if first.lo is None or second.lo is None:
        return True
    return first.lo < second.hi and second.lo < first.hi


def _external(entity):
    return isinstance(entity, SocketEntity) and entity.remote is not None and entity.proto != "unix"


def _unit(units, edge):
    return None if units is None else units.assignment.get(edge.seq)


def _chain_dag(graph, units, start):
    """Edge-level DAG: an arc e -> f when data carried by e can travel on through f."""
    dag = nx.DiGraph()
    dag.add_nodes_from(edge.seq for edge in graph.edges)
    for e in graph.edges:
        if e.dst != start and _external(graph.entity(e.dst)):
            continue
        for f in graph.edges:
            if f.seq <= e.seq or not any(_same_bytes(graph, e.dst, s) for s in f.sources):
                continue
            if _passes(graph, units, e.dst, _unit(units, e), f.seq):
                dag.add_edge(e.seq, f.seq)
    return dag


def _slice_of(graph, start, seqs):
    entities = {start}
    for seq in seqs:
        edge = graph.edge_at(seq)
        entities.add(edge.dst)
        entities.update(edge.sources)
    return frozenset(entities), sorted(seqs)


def _backward_oracle(graph, units, seed):
    """Every edge on some time- and unit-respecting path that ends in the seed."""
    dag = _chain_dag(graph, units, seed.entity)
    ends = [
        e.seq
        for e in graph.edges
        if e.seq <= seed.at_seq
        and _same_bytes(graph, e.dst, seed.entity)
        and _passes(graph, units, seed.entity, _unit(units, e), seed.at_seq)
    ]
    seqs = set(ends)
    for end in ends:
        seqs |= nx.ancestors(dag, end)
    return _slice_of(graph, seed.entity, seqs)


def _forward_oracle(graph, units, root, from_seq):
    """Every edge on some time- and unit-respecting path that starts at the root after ``from_seq``."""
    dag = _chain_dag(graph, units, root)
    starts = [f.seq for f in graph.edges if f.seq > from_seq and any(_same_bytes(graph, root, s) for s in f.sources)]
    seqs = set(starts)
    for first in starts:
        seqs |= nx.descendants(dag, first)
    return _slice_of(graph, root, seqs)


class TestTraversalOracle:
    @pytest.mark.parametrize("use_units", [False, True])
    def test_random_graphs_match_exhaustive_search(self, use_units):
        rng = random.Random(2024)
        for _ in range(100):
            graph, units = _random_graph(rng)
            units = units if use_units else None
            edge = rng.choice(graph.edges)
            seed = SeedPoint(edge.dst, edge.seq)
            back = backtrack(graph, units, seed)
            entities, edges = _backward_oracle(graph, units, seed)
            assert back.entities == entities
            assert [e.seq for e in back.edges] == edges

            root = rng.randrange(len(graph))
            start = rng.randint(0, len(graph.edges))
            fwd = forward_track(graph, units, root, start)
            entities, edges = _forward_oracle(graph, units, root, start)
            assert fwd.entities == entities
            assert [e.seq for e in fwd.edges] == edges

    def test_random_graphs_have_aliases_and_units(self):
        rng = random.Random(2024)
        graphs = [_random_graph(rng) for _ in range(100)]
        assert any(len(graph.aliases(eid)) > 1 for graph, _ in graphs for eid in range(len(graph)))
        assert any(len(set(units.assignment.values())) > 1 for _, units in graphs)

    def test_seq_decreases_along_backward_paths(self):
        rng = random.Random(5)
        for _ in range(50):
            graph, _ = _random_graph(rng)
            edge = graph.edges[-1]
            back = backtrack(graph, None, SeedPoint(edge.dst, edge.seq))
            for e in back.edges:
                assert e.seq <= edge.seq

    def test_partitioned_slice_is_a_subset(self):
        rng = random.Random(11)
        for _ in range(100):
            graph, units = _random_graph(rng)
            edge = rng.choice(graph.edges)
            seed = SeedPoint(edge.dst, edge.seq)
            whole = backtrack(graph, None, seed)
            confined = backtrack(graph, units, seed)
            assert confined.entities <= whole.entities
            assert {e.seq for e in confined.edges} <= {e.seq for e in whole.edges}

    @pytest.mark.parametrize("use_units", [False, True])
    def test_duality(self, use_units):
        rng = random.Random(3)
        for _ in range(40):
            graph, units = _random_graph(rng)
            units = units if use_units else None
            edge = rng.choice(graph.edges)
            seed = SeedPoint(edge.dst, edge.seq)
            targets = set(graph.aliases(seed.entity))
            for eid in backtrack(graph, units, seed).entities:
                if eid != seed.entity:
                    assert targets & forward_track(graph, units, eid).entities


class TestCrossGroupFlows:
    @pytest.fixture
    def fork_into_other_group(self):
        """q (group 1) forks p (group 2) at seq 1; p writes /g at seq 2 after switching units."""
        graph = ProvenanceGraph(
            [ProcessEntity(1, 0, 1, "q"), ProcessEntity(2, 0, 2, "p"), FileEntity("/g")],
            [FlowEdge(0, 1, 1, 1, "fork"), FlowEdge(1, 2, 2, 2, "write")],
        )
        units = UnitIndex({0: 20, 1: 10, 2: 21}, {10: 1, 20: 2, 21: 2})
        return graph, units

    def test_backward_admits_the_fork(self, fork_into_other_group):
        graph, units = fork_into_other_group
        assert 0 in backtrack(graph, units, SeedPoint(2, 2)).entities

    def test_forward_from_the_parent_reaches_the_write(self, fork_into_other_group):
        graph, units = fork_into_other_group
        assert [e.seq for e in forward_track(graph, units, 0).edges] == [1, 2]

    def test_same_group_flow_stays_cut(self):
        graph = ProvenanceGraph(
            [SOCK_A, ProcessEntity(2, 0, 2, "p"), FileEntity("/g")],
            [FlowEdge(0, 1, 1, 1, "read"), FlowEdge(1, 2, 2, 2, "write")],
        )
        units = UnitIndex({1: 20, 2: 21}, {20: 2, 21: 2})
        assert [e.seq for e in forward_track(graph, units, 0).edges] == [1]
        assert backtrack(graph, units, SeedPoint(2, 2)).root_candidates == (1,)
