"""Software stand-in for the enclave boundary.

Everything the trusted side needs from the host (node reads and writes,
file metadata, clock, randomness, sockets) goes through a :class:`Boundary`.
The boundary performs the host effect, counts the crossing, counts the bytes
marshalled in either direction and charges *virtual* latency according to a
:class:`LatencyModel`.  Nothing sleeps; benchmarks run at full speed and the
simulated time is reported next to the wall-clock time.
"""

from __future__ import annotations

import dataclasses
import enum
import json
import os
import threading
from collections import Counter
from dataclasses import dataclass, field
from typing import Any, Callable

from .errors import NotFound, StorageError

NODE_SIZE = 4096


class StorageOp(enum.Enum):
    OPEN = "open"
    READ_NODE = "read_node"
    WRITE_NODE = "write_node"
    STAT = "stat"
    TRUNCATE = "truncate"
    CLOSE = "close"


@dataclass(frozen=True)
class LatencyModel:
    """Constant cost per crossing plus a linear cost per marshalled byte.

    ``clear_cycles_per_byte`` does not feed ``simulated_latency``; it is only
    used to attribute clearing time in benchmark breakdowns.
    """

    crossing_cycles: int = 14_170
    copy_cycles_per_byte: int = 1
    clear_cycles_per_byte: int = 1
    cpu_hz: float = 3.8e9

    @property
    def crossing_seconds(self) -> float:
        return self.crossing_cycles / self.cpu_hz


LATENCY_PRESETS: dict[str, LatencyModel] = {
    # median ECALL/OCALL transition on the evaluation machine (3.8 GHz)
    "sgx-median": LatencyModel(),
    # measured enclave round trip when reading the timer, ~4 ms
    "round-trip-4ms": LatencyModel(crossing_cycles=15_200_000),
    "free": LatencyModel(crossing_cycles=0, copy_cycles_per_byte=0, clear_cycles_per_byte=0),
}


@dataclass
class BoundaryCounters:
    ecalls: int = 0
    ocalls: int = 0
    bytes_copied_in: int = 0
    bytes_copied_out: int = 0
    bytes_cleared: int = 0
    latency_cycles: int = 0
    cpu_hz: float = 3.8e9
    ocalls_by_kind: Counter = field(default_factory=Counter)

    _SCALARS = ("ecalls", "ocalls", "bytes_copied_in", "bytes_copied_out", "bytes_cleared", "latency_cycles")

    @property
    def simulated_latency(self) -> float:
        """Charged virtual time in seconds."""
        return self.latency_cycles / self.cpu_hz

    @property
    def bytes_copied(self) -> int:
        return self.bytes_copied_in + self.bytes_copied_out

    def __sub__(self, other: BoundaryCounters) -> BoundaryCounters:
        out = BoundaryCounters(cpu_hz=self.cpu_hz)
        for name in self._SCALARS:
            setattr(out, name, getattr(self, name) - getattr(other, name))
        kinds = Counter(self.ocalls_by_kind)
        kinds.subtract(other.ocalls_by_kind)
        out.ocalls_by_kind = Counter({k: v for k, v in kinds.items() if v})
        return out

    def to_dict(self) -> dict[str, Any]:
        d = {name: getattr(self, name) for name in self._SCALARS}
        d["simulated_latency_s"] = self.simulated_latency
        d["ocalls_by_kind"] = dict(sorted(self.ocalls_by_kind.items()))
        return d

    def to_kv(self) -> str:
        lines = [f"{k}={v}" for k, v in self.to_dict().items() if k != "ocalls_by_kind"]
        lines += [f"ocalls.{k}={v}" for k, v in sorted(self.ocalls_by_kind.items())]
        return "\n".join(lines) + "\n"

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


class UntrustedView:
    """A window onto host memory that the trusted side may read in place.

    Creating the view copies nothing.  :meth:`materialize` pulls the bytes
    across and is charged like any other inbound copy.
    """

    __slots__ = ("_buf", "offset", "length", "_boundary")

    def __init__(self, boundary: Boundary, buf: memoryview, offset: int, length: int):
        self._boundary = boundary
        self._buf = buf
        self.offset = offset
        self.length = length

    @property
    def buffer(self) -> memoryview:
        return self._buf

    def __len__(self) -> int:
        return self.length

    def materialize(self) -> bytes:
        self._boundary._charge_copy(self.length, inbound=True)
        return bytes(self._buf)


class HostFile:
    """Untrusted-side state for one backing file.

    The staging buffer models the untrusted application buffer the host reads
    node ciphertext into.  A view handed out over it stays valid until the
    next read on the same file.
    """

    def __init__(self, path: str, fd: int):
        self.path = path
        self.fd = fd
        self._staging = bytearray(NODE_SIZE)
        self.staging = memoryview(self._staging)

    @property
    def closed(self) -> bool:
        return self.fd < 0

    def __del__(self):
        if self.fd >= 0:
            try:
                os.close(self.fd)
            except OSError:
                pass


class Boundary:
    """One simulated enclave boundary with its counters."""

    def __init__(self, latency: LatencyModel | None = None):
        self.latency = latency or LatencyModel()
        self._lock = threading.Lock()
        self._counters = BoundaryCounters(cpu_hz=self.latency.cpu_hz)
        self._local = threading.local()

    # accounting

    @property
    def in_ocall(self) -> bool:
        return getattr(self._local, "depth", 0) > 0

    def _charge_crossing(self, kind: str) -> None:
        with self._lock:
            c = self._counters
            c.ocalls += 1
            c.ocalls_by_kind[kind] += 1
            c.latency_cycles += self.latency.crossing_cycles

    def _charge_copy(self, n: int, inbound: bool) -> None:
        if not n:
            return
        with self._lock:
            c = self._counters
            if inbound:
                c.bytes_copied_in += n
            else:
                c.bytes_copied_out += n
            c.latency_cycles += self.latency.copy_cycles_per_byte * n

    def ecall(self) -> None:
        """Count the single entry call that starts a guest."""
        with self._lock:
            self._counters.ecalls += 1

    def track_clear(self, n: int) -> None:
        if n:
            with self._lock:
                self._counters.bytes_cleared += n

    def snapshot(self) -> BoundaryCounters:
        with self._lock:
            c = dataclasses.replace(self._counters)
            c.ocalls_by_kind = Counter(self._counters.ocalls_by_kind)
            return c

    def reset(self) -> None:
        with self._lock:
            self._counters = BoundaryCounters(cpu_hz=self.latency.cpu_hz)

    # crossings

    def ocall(self, kind: str, fn: Callable[..., Any], *args, copied_in: int = 0, copied_out: int = 0) -> Any:
        """Run ``fn`` on the untrusted side and charge one crossing."""
        self._charge_crossing(kind)
        self._charge_copy(copied_out, inbound=False)
        self._local.depth = getattr(self._local, "depth", 0) + 1
        try:
            result = fn(*args)
        finally:
            self._local.depth -= 1
        if copied_in:
            self._charge_copy(copied_in, inbound=True)
        return result

    def ocall_storage(self, op: StorageOp, *args, **kwargs) -> Any:
        """Perform one storage primitive on the host.

        ``OPEN(path, create=False, truncate=False) -> HostFile``
        ``READ_NODE(hf, index, into=None) -> UntrustedView | memoryview``
            Without ``into`` the ciphertext stays in untrusted memory and a
            view is returned.  With ``into`` (a writable buffer inside the
            enclave) the node is marshalled across and charged as a copy.
        ``WRITE_NODE(hf, index, data)``
        ``STAT(hf) -> (size, mtime_ns)``
        ``TRUNCATE(hf, size)``
        ``CLOSE(hf)``
        """
        handler = self._STORAGE[op]
        return handler(self, *args, **kwargs)

    def _open(self, path: str, create: bool = False, truncate: bool = False) -> HostFile:
        flags = os.O_RDWR | getattr(os, "O_CLOEXEC", 0)
        if create:
            flags |= os.O_CREAT
        if truncate:
            flags |= os.O_TRUNC

        def do():
            try:
                return os.open(path, flags, 0o600)
            except FileNotFoundError:
                raise NotFound(path) from None
            except OSError as e:
                raise StorageError(e.errno, f"open {path}: {e.strerror}") from None

        fd = self.ocall(StorageOp.OPEN.value, do)
        return HostFile(path, fd)

    def _read_node(self, hf: HostFile, index: int, into: memoryview | None = None):
        staging = hf.staging

        def do():
            try:
                n = os.preadv(hf.fd, [staging], index * NODE_SIZE)
            except OSError as e:
                raise StorageError(e.errno, f"read node {index}: {e.strerror}") from None
            if n < NODE_SIZE:
                # short node (truncated host file); authentication will reject it
                staging[n:] = bytes(NODE_SIZE - n)

        if into is None:
            self.ocall(StorageOp.READ_NODE.value, do)
            return UntrustedView(self, staging, index * NODE_SIZE, NODE_SIZE)
        self.ocall(StorageOp.READ_NODE.value, do, copied_in=NODE_SIZE)
        into[:NODE_SIZE] = staging
        return into

    def _write_node(self, hf: HostFile, index: int, data) -> None:
        if len(data) != NODE_SIZE:
            raise ValueError("node images are exactly 4096 bytes")

        def do():
            try:
                n = os.pwrite(hf.fd, data, index * NODE_SIZE)
            except OSError as e:
                raise StorageError(e.errno, f"write node {index}: {e.strerror}") from None
            if n != NODE_SIZE:
                raise StorageError(0, f"short write on node {index}")

        self.ocall(StorageOp.WRITE_NODE.value, do, copied_out=NODE_SIZE)

    def _stat(self, hf: HostFile) -> tuple[int, int]:
        def do():
            st = os.fstat(hf.fd)
            return st.st_size, st.st_mtime_ns

        return self.ocall(StorageOp.STAT.value, do)

    def _truncate(self, hf: HostFile, size: int) -> None:
        self.ocall(StorageOp.TRUNCATE.value, os.ftruncate, hf.fd, size)

    def _close(self, hf: HostFile) -> None:
        if hf.closed:
            return

        def do():
            fd, hf.fd = hf.fd, -1
            os.close(fd)

        self.ocall(StorageOp.CLOSE.value, do)

    _STORAGE = {
        StorageOp.OPEN: _open,
        StorageOp.READ_NODE: _read_node,
        StorageOp.WRITE_NODE: _write_node,
        StorageOp.STAT: _stat,
        StorageOp.TRUNCATE: _truncate,
        StorageOp.CLOSE: _close,
    }
