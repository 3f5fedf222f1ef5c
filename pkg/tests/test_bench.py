"""Tests for the throughput benchmark."""

import io

from provtrace.bench import THROUGHPUT_TARGET, format_report, run_benchmark, synthetic_trace
from provtrace.ingest import read_trace


def test_synthetic_trace_is_well_formed():
    data = synthetic_trace(2000, seed=1)
    reader = read_trace(io.BytesIO(data), strict=True)
    events = list(reader)
    assert len(events) == 2000
    assert reader.stats.malformed == 0
    assert synthetic_trace(2000, seed=1) == data


def test_report_fields():
    report = run_benchmark(events=3000, seed=2)
    assert report["events"] == 3000
    assert report["target_events_per_second"] == THROUGHPUT_TARGET
    assert report["edges"] > 0
    assert report["meets_target"] == (report["events_per_second"] >= THROUGHPUT_TARGET)
    assert set(report["host"]) == {"platform", "python", "cpu_count", "memory_gb"}


def test_pipelined_report_matches_graph_size():
    plain = run_benchmark(events=3000, seed=2)
    piped = run_benchmark(events=3000, seed=2, pipelined=True)
    assert piped["pipelined"] is True
    assert (piped["entities"], piped["edges"]) == (plain["entities"], plain["edges"])


def test_format_report():
    report = {
        "events": 10,
        "seconds": 0.5,
        "events_per_second": 20,
        "target_events_per_second": THROUGHPUT_TARGET,
        "meets_target": False,
        "entities": 3,
        "edges": 2,
        "rss_mb": 50.0,
        "rss_growth_mb": 1.0,
        "host": {"platform": "Linux", "python": "3.12.0", "cpu_count": 4, "memory_gb": 8.0},
    }
    text = format_report(report)
    assert "below the 100,000 events/s target" in text
    assert "Graph: 3 entities, 2 edges" in text


def test_rss_uses_psutil(mocker):
    fake = mocker.patch("provtrace.bench.psutil.Process")
    fake.return_value.memory_info.return_value.rss = 200 * 1024 * 1024
    report = run_benchmark(events=100)
    assert report["rss_mb"] == 200.0
    assert report["rss_growth_mb"] == 0.0
