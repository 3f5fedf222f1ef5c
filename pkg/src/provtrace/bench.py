"""Parse+build throughput measurement on a synthetic trace."""

from __future__ import annotations

import io
import platform
import random
import time

import psutil

try:
    from .graph import build_graph
    from .ingest import format_line, read_trace
    from .logger import get_logger
    from .model import Event
    from .worker import build_pipelined
except ImportError:  # pragma: no cover
    from graph import build_graph  # type: ignore
    from ingest import format_line, read_trace  # type: ignore
    from logger import get_logger  # type: ignore
    from model import Event  # type: ignore
    from worker import build_pipelined  # type: ignore

logger = get_logger("provtrace.bench")

THROUGHPUT_TARGET = 100_000  # events per second


def synthetic_trace(count: int, seed: int = 0, processes: int = 16) -> bytes:
    """A well-formed trace of ``count`` events: opens, reads, writes and sends over a few processes."""
    rng = random.Random(seed)
    pids = [2000 + 7 * i for i in range(processes)]
    fds: dict[int, list[int]] = {pid: [] for pid in pids}
    out = io.StringIO()
    ts = 1_700_000_000_000_000_000
    for seq in range(1, count + 1):
        ts += rng.randint(500, 5000)
        pid = rng.choice(pids)
        open_fds = fds[pid]
        roll = rng.random()
        if not open_fds or roll < 0.05:
            fd = 3 + len(open_fds)
            if rng.random() < 0.3:
                event = Event(seq, ts, pid, pid, pid, "bench", "socket", (("domain", "AF_INET"), ("type", "SOCK_STREAM")), fd)
            else:
                event = Event(seq, ts, pid, pid, pid, "bench", "open", (("path", f"/var/tmp/bench/{pid}/{fd}"), ("flags", "O_RDWR")), fd)
            open_fds.append(fd)
        elif roll < 0.5:
            event = Event(seq, ts, pid, pid, pid, "bench", "read", (("fd", rng.choice(open_fds)), ("count", 512)), 512)
        else:
            event = Event(seq, ts, pid, pid, pid, "bench", "write", (("fd", rng.choice(open_fds)), ("count", 256)), 256)
        out.write(format_line(event))
        out.write("\n")
    return out.getvalue().encode("utf-8")


def _rss_mb() -> float:
    return psutil.Process().memory_info().rss / (1024 * 1024)


def run_benchmark(events: int = 1_000_000, seed: int = 0, pipelined: bool = False) -> dict:
    logger.info(f"Generating {events} synthetic events")
    data = synthetic_trace(events, seed)
    rss_before = _rss_mb()

    start = time.perf_counter()
    reader = read_trace(io.BytesIO(data), "pipe")
    graph = build_pipelined(reader) if pipelined else build_graph(reader)
    elapsed = time.perf_counter() - start

    rate = events / elapsed if elapsed > 0 else float("inf")
    report = {
        "events": events,
        "seconds": round(elapsed, 3),
        "events_per_second": round(rate),
        "target_events_per_second": THROUGHPUT_TARGET,
        "meets_target": rate >= THROUGHPUT_TARGET,
        "pipelined": pipelined,
        "entities": len(graph.entities),
        "edges": len(graph.edges),
        "rss_mb": round(_rss_mb(), 1),
        "rss_growth_mb": round(_rss_mb() - rss_before, 1),
        "host": {
            "platform": platform.platform(),
            "python": platform.python_version(),
            "cpu_count": psutil.cpu_count(logical=True),
            "memory_gb": round(psutil.virtual_memory().total / (1024**3), 1),
        },
    }
    logger.info(f"Parsed and built {events} events in {elapsed:.2f}s ({rate:,.0f} events/s)")
    return report


def format_report(report: dict) -> str:
    status = "meets" if report["meets_target"] else "below"
    return "\n".join(
        [
            f"Events: {report['events']}",
            f"Time: {report['seconds']} s",
            f"Throughput: {report['events_per_second']:,} events/s ({status} the {report['target_events_per_second']:,} events/s target)",
            f"Graph: {report['entities']} entities, {report['edges']} edges",
            f"Memory: {report['rss_mb']} MB RSS (+{report['rss_growth_mb']} MB)",
            f"Host: {report['host']['platform']}, Python {report['host']['python']}, "
            f"{report['host']['cpu_count']} CPUs, {report['host']['memory_gb']} GB RAM",
        ]
    )
