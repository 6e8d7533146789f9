import os

import pytest
import structlog

from app.services.backend import MemoryBackend
from app.services.monitor import Monitor
from app.services.pagestore import SealingKey
from app.services.reference import ReferenceFs
from app.services.state import PathName, Permission


ACCEPTANCE = os.environ.get("BESFS_ACCEPTANCE") == "1"

RW = Permission.parse("rw-")
RO = Permission.parse("r--")
RWX = Permission.parse("rwx")
RX = Permission.parse("r-x")


@pytest.fixture(autouse=True)
def _restore_structlog_config():
    # configure_logging binds the current sys.stderr, which pytest closes
    # after each captured test; restore the prior config so later tests
    # don't log to a closed stream
    saved = structlog.get_config()
    yield
    structlog.configure(**saved)


def P(text: str) -> PathName:
    return PathName.parse(text)


def pytest_collection_modifyitems(config, items):
    if ACCEPTANCE:
        return
    skip = pytest.mark.skip(reason="set BESFS_ACCEPTANCE=1 for full-size runs")
    for item in items:
        if "acceptance" in item.keywords:
            item.add_marker(skip)


@pytest.fixture
def key() -> SealingKey:
    return SealingKey(bytes(range(32)))


@pytest.fixture
def other_key() -> SealingKey:
    return SealingKey(bytes(range(32, 64)))


@pytest.fixture
def backend() -> MemoryBackend:
    return MemoryBackend()


@pytest.fixture
def monitor(backend, key) -> Monitor:
    m = Monitor(backend, key, check_good=True)
    assert m.format().ok
    return m


@pytest.fixture
def reference() -> ReferenceFs:
    return ReferenceFs()


@pytest.fixture
def open_file(monitor):
    """a monitor with /f created and open; returns (monitor, handle)"""
    assert monitor.fs_create(P("/f"), RW).ok
    opened = monitor.fs_open(P("/f"))
    assert opened.ok
    return monitor, opened.value
