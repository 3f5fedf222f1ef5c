import os
import sys
from pathlib import Path

import pytest

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from provtrace import paths  # noqa: E402
from provtrace.model import Event  # noqa: E402

FIXTURES = Path(__file__).parent / "fixtures"


def ev(seq, pid, syscall, args=(), retval=0, *, pgid=None, tid=None, comm="proc", ts=None):
    """Event shorthand: ``args`` may be a dict or a tuple of pairs."""
    if isinstance(args, dict):
        args = tuple(args.items())
    return Event(
        seq,
        ts if ts is not None else 1000 + seq,
        pid,
        tid if tid is not None else pid,
        pgid if pgid is not None else pid,
        comm,
        syscall,
        tuple(args),
        retval,
    )


@pytest.fixture
def fixtures_dir() -> Path:
    return FIXTURES


@pytest.fixture(autouse=True)
def isolated_config(tmp_path, monkeypatch):
    """Point config and data dir at a temp location so tests never see a user's setup."""
    monkeypatch.setenv("PROVTRACE_CONFIG", str(tmp_path / "config.json"))
    monkeypatch.setenv("PROVTRACE_DATA_DIR", str(tmp_path / "data"))
    paths.reset_config_cache()
    yield
    paths.reset_config_cache()
