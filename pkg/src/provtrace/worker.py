import queue
import threading
from typing import Any, Callable, Iterable, Iterator, List

try:
    from .graph import GraphBuilder, ProvenanceGraph
    from .logger import get_logger
    from .model import Event
except ImportError:  # pragma: no cover
    from graph import GraphBuilder, ProvenanceGraph  # type: ignore
    from logger import get_logger  # type: ignore
    from model import Event  # type: ignore

logger = get_logger("provtrace.worker")

# Parsing runs on one producer thread; the consumer (graph building) stays on
# the caller's thread. Batches are tuples so neither side can mutate the other's data.

DEFAULT_BATCH_SIZE = 4096
DEFAULT_QUEUE_DEPTH = 8

_DONE = object()


class _Failure:
    def __init__(self, error: BaseException):
        self.error = error


def _producer(events: Iterable[Event], jobs: queue.Queue, batch_size: int, stop: threading.Event):
    batch: List[Event] = []
    try:
        for event in events:
            batch.append(event)
            if len(batch) >= batch_size:
                if not _put(jobs, tuple(batch), stop):
                    return
                batch = []
        if batch:
            _put(jobs, tuple(batch), stop)
    except BaseException as e:  # handed to the consumer thread
        _put(jobs, _Failure(e), stop)
        return
    _put(jobs, _DONE, stop)


def _put(jobs: queue.Queue, item: Any, stop: threading.Event) -> bool:
    while not stop.is_set():
        try:
            jobs.put(item, timeout=0.1)
            return True
        except queue.Full:
            continue
    return False


def iter_batches(
    events: Iterable[Event],
    batch_size: int = DEFAULT_BATCH_SIZE,
    depth: int = DEFAULT_QUEUE_DEPTH,
) -> Iterator[tuple]:
    """Pull ``events`` on a worker thread and yield immutable batches in order.

    An exception raised while producing events is re-raised here.
    """
    jobs: queue.Queue = queue.Queue(maxsize=depth)
    stop = threading.Event()
    thread = threading.Thread(
        target=_producer, args=(events, jobs, batch_size, stop), name="provtrace-parser", daemon=True
    )
    thread.start()
    try:
        while True:
            item = jobs.get()
            if item is _DONE:
                break
            if isinstance(item, _Failure):
                raise item.error
            yield item
    finally:
        stop.set()
        thread.join(timeout=1.0)


def build_pipelined(
    events: Iterable[Event],
    batch_size: int = DEFAULT_BATCH_SIZE,
    depth: int = DEFAULT_QUEUE_DEPTH,
    on_batch: Callable[[int], None] = None,
) -> ProvenanceGraph:
    """Same result as ``build_graph(events)`` with parsing overlapped with building."""
    builder = GraphBuilder()
    count = 0
    for batch in iter_batches(events, batch_size, depth):
        builder.feed(batch)
        count += len(batch)
        if on_batch:
            on_batch(count)
    logger.debug(f"Pipelined build consumed {count} events")
    return builder.finish()
