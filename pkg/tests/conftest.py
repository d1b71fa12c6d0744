from __future__ import annotations

import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from wasmtee.boundary import Boundary  # noqa: E402
from wasmtee.crypto import SealingContext  # noqa: E402

VECTORS = Path(__file__).resolve().parent.parent / "vectors"


@pytest.fixture
def ctx() -> SealingContext:
    return SealingContext(bytes(range(32)), bytes(range(32, 64)))


@pytest.fixture
def boundary() -> Boundary:
    return Boundary()


_AUDITED = ("open", "pread", "preadv", "pwrite", "pwritev", "read", "write", "fstat", "ftruncate", "close", "lseek")


@pytest.fixture
def audited_io(monkeypatch):
    """Fail on any host file primitive that runs outside an accounted ocall.

    Usage: ``with audited_io(boundary): ...``.  Only raw ``os`` calls and
    ``builtins.open`` are watched, which is everything the storage layer uses.
    """
    import builtins
    import contextlib
    import os

    @contextlib.contextmanager
    def watch(boundary: Boundary):
        violations: list[str] = []
        seen: list[str] = []

        def guard(name, fn):
            def wrapper(*args, **kwargs):
                seen.append(name)
                if not boundary.in_ocall:
                    violations.append(name)
                return fn(*args, **kwargs)

            return wrapper

        with monkeypatch.context() as m:
            for name in _AUDITED:
                if hasattr(os, name):
                    m.setattr(os, name, guard(name, getattr(os, name)))
            m.setattr(builtins, "open", guard("builtins.open", builtins.open))
            yield seen
        assert not violations, f"host I/O outside the boundary: {violations}"

    return watch


ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
