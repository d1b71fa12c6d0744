"""Capability layer between a guest and the host.

A :class:`Policy` grants directory preopens, socket address ranges, the set
of callable system interface functions and a memory budget.
:class:`WasiSandbox` enforces it: every guest call passes :meth:`WasiSandbox.call`,
which refuses disabled or unknown calls before anything crosses the boundary.
File descriptors opened under a preopen are protected files.

Policy file grammar (JSON)::

    {
      "preopens":        {"<guest name>": "<host directory>", ...},
      "allowed_cidrs":   ["10.0.0.0/8", "2001:db8::/32", ...],
      "enabled_calls":   ["fd_read", "fd_write", ...],    # optional
      "memory_budget":   67108864,                         # bytes, optional
      "app_protocol_only": false,                          # optional
      "endpoints":       ["10.0.0.1:443", ...]             # optional
    }

When ``enabled_calls`` is absent, every non-socket call is enabled.  The
canonical form sorts every list, normalises CIDRs and endpoints, and is
serialised as compact sorted-key ASCII JSON; its SHA-256 is the policy hash.
"""

from __future__ import annotations

import hashlib
import io
import ipaddress
import json
import os
import socket
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

from .boundary import Boundary
from .crypto import SealingContext
from .errors import BadDescriptor, NotFound, PolicyDenied, PolicyError
from .pfs import DEFAULT_CACHE_CAPACITY, OPTIMIZED, FsVariant, OpenMode, ProtectedFile, Whence, open_protected

FILE_CALLS = frozenset(
    {
        "path_open",
        "fd_read",
        "fd_write",
        "fd_seek",
        "fd_close",
        "fd_filestat_get",
        "fd_fdstat_get",
        "fd_prestat_get",
        "fd_prestat_dir_name",
    }
)
PROC_CALLS = frozenset(
    {"args_get", "args_sizes_get", "environ_get", "environ_sizes_get", "proc_exit", "clock_time_get", "random_get"}
)
SOCKET_CALLS = frozenset({"sock_connect", "sock_send", "sock_recv", "sock_shutdown"})
KNOWN_CALLS = FILE_CALLS | PROC_CALLS | SOCKET_CALLS
DEFAULT_CALLS = FILE_CALLS | PROC_CALLS

DEFAULT_MEMORY_BUDGET = 64 * 1024 * 1024


@dataclass(frozen=True)
class Preopen:
    name: str
    host_dir: str


def _parse_endpoint(text: str) -> tuple[str, int]:
    host, sep, port = text.rpartition(":")
    if not sep or not host:
        raise PolicyError(f"endpoint {text!r} is not host:port")
    host = host.strip("[]")
    try:
        host = str(ipaddress.ip_address(host))
    except ValueError:
        host = host.lower()
    try:
        return host, int(port)
    except ValueError:
        raise PolicyError(f"endpoint {text!r} has a bad port") from None


@dataclass(frozen=True)
class Policy:
    preopens: tuple[Preopen, ...] = ()
    allowed_cidrs: tuple = ()
    enabled_calls: frozenset = DEFAULT_CALLS
    memory_budget: int = DEFAULT_MEMORY_BUDGET
    app_protocol_only: bool = False
    endpoints: tuple[tuple[str, int], ...] = ()
    # where relative preopen directories are anchored; not part of the hash
    base_dir: str = field(default=".", compare=False)

    def __post_init__(self):
        names = [p.name for p in self.preopens]
        if len(set(names)) != len(names):
            raise PolicyError("duplicate preopen name")
        unknown = set(self.enabled_calls) - KNOWN_CALLS
        if unknown:
            raise PolicyError(f"unknown calls in policy: {sorted(unknown)}")
        if self.memory_budget <= 0:
            raise PolicyError("memory_budget must be positive")

    @classmethod
    def from_dict(cls, doc: dict, base_dir: str = ".") -> Policy:
        if not isinstance(doc, dict):
            raise PolicyError("policy must be a JSON object")
        extra = set(doc) - {
            "preopens",
            "allowed_cidrs",
            "enabled_calls",
            "memory_budget",
            "app_protocol_only",
            "endpoints",
        }
        if extra:
            raise PolicyError(f"unknown policy keys: {sorted(extra)}")
        try:
            pre = doc.get("preopens", {})
            preopens = tuple(Preopen(str(k), str(v)) for k, v in pre.items())
            cidrs = tuple(ipaddress.ip_network(c, strict=True) for c in doc.get("allowed_cidrs", []))
        except (AttributeError, ValueError, TypeError) as e:
            raise PolicyError(str(e)) from None
        calls = frozenset(doc["enabled_calls"]) if "enabled_calls" in doc else DEFAULT_CALLS
        return cls(
            preopens=preopens,
            allowed_cidrs=cidrs,
            enabled_calls=calls,
            memory_budget=int(doc.get("memory_budget", DEFAULT_MEMORY_BUDGET)),
            app_protocol_only=bool(doc.get("app_protocol_only", False)),
            endpoints=tuple(_parse_endpoint(e) for e in doc.get("endpoints", [])),
            base_dir=base_dir,
        )

    @classmethod
    def load(cls, path: str | os.PathLike) -> Policy:
        path = Path(path)
        try:
            doc = json.loads(path.read_text())
        except (OSError, json.JSONDecodeError) as e:
            raise PolicyError(f"cannot read policy {path}: {e}") from None
        return cls.from_dict(doc, base_dir=str(path.parent))

    def canonical(self) -> bytes:
        nets = sorted(self.allowed_cidrs, key=lambda n: (n.version, int(n.network_address), n.prefixlen))
        doc = {
            "allowed_cidrs": [str(n) for n in nets],
            "app_protocol_only": self.app_protocol_only,
            "enabled_calls": sorted(self.enabled_calls),
            "endpoints": [f"{h}:{p}" for h, p in sorted(set(self.endpoints))],
            "memory_budget": self.memory_budget,
            "preopens": {p.name: p.host_dir for p in self.preopens},
        }
        return json.dumps(doc, sort_keys=True, separators=(",", ":"), ensure_ascii=True).encode()

    def digest(self) -> bytes:
        return hashlib.sha256(self.canonical()).digest()

    def preopen(self, preopen_id: int | str) -> Preopen:
        if isinstance(preopen_id, int):
            if not 0 <= preopen_id < len(self.preopens):
                raise PolicyDenied(f"no preopen #{preopen_id}")
            return self.preopens[preopen_id]
        for p in self.preopens:
            if p.name == preopen_id:
                return p
        raise PolicyDenied(f"no preopen named {preopen_id!r}")

    def host_root(self, preopen_id: int | str) -> str:
        pre = self.preopen(preopen_id)
        return os.path.realpath(os.path.join(self.base_dir, pre.host_dir))


def path_resolve(policy: Policy, preopen_id: int | str, relative_path: str, must_exist: bool = False) -> str:
    """Map a guest path under a preopen to a host path inside that subtree.

    Symlinks are resolved before the containment check, so a link that
    points out of the subtree is refused like a literal ``..`` escape.
    The preopen directory itself is not a valid target.
    """
    root = policy.host_root(preopen_id)
    if "\x00" in relative_path:
        raise PolicyDenied("NUL byte in path")
    if relative_path.startswith("/"):
        raise PolicyDenied("absolute paths are not capabilities")
    candidate = os.path.realpath(os.path.join(root, relative_path))
    if candidate == root or os.path.commonpath([root, candidate]) != root:
        raise PolicyDenied(f"{relative_path!r} escapes preopen {policy.preopen(preopen_id).name!r}")
    if must_exist and not os.path.exists(candidate):
        raise NotFound(relative_path)
    return candidate


def file_id_for(policy: Policy, preopen_id: int | str, host_path: str) -> str:
    """Stable name of a resolved file: preopen name plus its path inside the root.

    Root keys are derived from this, so it must not depend on where the
    host keeps the preopen.
    """
    pre = policy.preopen(preopen_id)
    rel = os.path.relpath(host_path, policy.host_root(preopen_id))
    return pre.name + "/" + Path(rel).as_posix()


def address_allowed(policy: Policy, address: str) -> bool:
    try:
        ip = ipaddress.ip_address(address)
    except ValueError:
        return False
    return any(ip.version == net.version and ip in net for net in policy.allowed_cidrs)


class MonotonicClock:
    """Strictly increasing timestamps over an untrusted source.

    A reading at or below the previous one is replaced by previous + 1,
    so host clock regressions never reach the guest.
    """

    def __init__(self, source: Callable[[], int]):
        self._source = source
        self._last: int | None = None

    def now(self) -> int:
        t = int(self._source())
        if self._last is not None and t <= self._last:
            t = self._last + 1
        self._last = t
        return t


@dataclass
class _Fd:
    kind: str  # "stdio", "dir", "file", "socket"
    obj: object = None
    name: str = ""


class WasiSandbox:
    """Per-guest capability state: descriptor table, clock, policy checks.

    Methods named after system interface calls take and return Python
    values; the engine binding does memory marshalling and errno mapping.
    """

    def __init__(
        self,
        policy: Policy,
        boundary: Boundary,
        ctx: SealingContext,
        *,
        fs_variant: FsVariant = OPTIMIZED,
        cache_capacity: int = DEFAULT_CACHE_CAPACITY,
        cache_fstat: bool = False,
        clock_source: Callable[[], int] | None = None,
        stdout: io.RawIOBase | None = None,
        stderr: io.RawIOBase | None = None,
        connect_timeout: float = 5.0,
    ):
        self.policy = policy
        self.boundary = boundary
        self.ctx = ctx
        self.fs_variant = fs_variant
        self.cache_capacity = cache_capacity
        self.cache_fstat = cache_fstat
        self.connect_timeout = connect_timeout
        source = clock_source or time.monotonic_ns
        self.clock = MonotonicClock(lambda: boundary.ocall("clock_time_get", source))
        self._sinks = {1: stdout if stdout is not None else io.BytesIO(), 2: stderr if stderr is not None else io.BytesIO()}
        self.fds: dict[int, _Fd] = {0: _Fd("stdio"), 1: _Fd("stdio"), 2: _Fd("stdio")}
        for i, pre in enumerate(policy.preopens):
            self.fds[3 + i] = _Fd("dir", i, pre.name)
        self._next_fd = 3 + len(policy.preopens)

    # gate

    def allowed(self, call_id: str) -> bool:
        return call_id in KNOWN_CALLS and call_id in self.policy.enabled_calls

    def gate(self, call_id: str) -> None:
        if not self.allowed(call_id):
            raise PolicyDenied(f"call {call_id!r} is disabled by policy")

    def call(self, call_id: str, *args):
        """Check ``call_id`` against the policy, then dispatch it."""
        self.gate(call_id)
        handler = getattr(self, call_id, None)
        if handler is None:
            # proc_exit and the args/environ calls are answered by the engine binding
            raise PolicyDenied(f"call {call_id!r} has no sandbox implementation")
        return handler(*args)

    # descriptors

    def _fd(self, fd: int, kind: str | None = None) -> _Fd:
        entry = self.fds.get(fd)
        if entry is None or (kind is not None and entry.kind != kind):
            raise BadDescriptor(f"bad descriptor {fd}")
        return entry

    def _install(self, entry: _Fd) -> int:
        fd = self._next_fd
        self.fds[fd] = entry
        self._next_fd += 1
        return fd

    def file(self, fd: int) -> ProtectedFile:
        return self._fd(fd, "file").obj

    # files

    def fd_prestat_get(self, fd: int) -> str:
        return self._fd(fd, "dir").name

    def fd_prestat_dir_name(self, fd: int) -> str:
        return self._fd(fd, "dir").name

    def fd_fdstat_get(self, fd: int) -> str:
        return self._fd(fd).kind

    def path_open(self, dirfd: int, path: str, create: bool = False, truncate: bool = False, write: bool = False) -> int:
        entry = self._fd(dirfd, "dir")
        host = path_resolve(self.policy, entry.obj, path)
        file_id = file_id_for(self.policy, entry.obj, host)
        if create and (truncate or not os.path.exists(host)):
            mode = OpenMode.CREATE_TRUNCATE
        elif write:
            mode = OpenMode.READ_WRITE
        else:
            mode = OpenMode.READ
        h = open_protected(
            host,
            mode,
            ctx=self.ctx,
            file_id=file_id,
            variant=self.fs_variant,
            cache_capacity=self.cache_capacity,
            boundary=self.boundary,
        )
        return self._install(_Fd("file", h, file_id))

    def fd_read(self, fd: int, lengths: list[int]) -> list[bytes]:
        entry = self._fd(fd)
        if entry.kind == "stdio":
            if fd != 0:
                raise BadDescriptor("stdout/stderr are write-only")
            return [b"" for _ in lengths]
        if entry.kind == "socket":
            return [self.sock_recv(fd, sum(lengths))]
        return self._fd(fd, "file").obj.readv(lengths)

    def fd_write(self, fd: int, segments: list[bytes]) -> int:
        entry = self._fd(fd)
        if entry.kind == "stdio":
            if fd == 0:
                raise BadDescriptor("stdin is read-only")
            data = b"".join(segments)
            sink = self._sinks[fd]
            self.boundary.ocall("fd_write", sink.write, data, copied_out=len(data))
            return len(data)
        if entry.kind == "socket":
            return self.sock_send(fd, b"".join(segments))
        return self._fd(fd, "file").obj.writev(segments)

    def fd_seek(self, fd: int, offset: int, whence: int) -> int:
        return self.file(fd).seek(offset, Whence(whence))

    def fd_filestat_get(self, fd: int) -> int:
        h = self.file(fd)
        return h.size_cached() if self.cache_fstat else h.size()

    def fd_close(self, fd: int) -> None:
        entry = self._fd(fd)
        if entry.kind in ("stdio", "dir"):
            raise BadDescriptor(f"descriptor {fd} cannot be closed")
        del self.fds[fd]
        if entry.kind == "file":
            entry.obj.close()
        else:
            self.boundary.ocall("sock_close", entry.obj.close)

    def close_all(self) -> None:
        """Flush and close every descriptor the guest left open."""
        for fd in [fd for fd, e in self.fds.items() if e.kind in ("file", "socket")]:
            self.fd_close(fd)

    # clock and randomness

    def clock_time_get(self, clock_id: int = 1, precision: int = 1) -> int:
        return self.clock.now()

    def random_get(self, n: int) -> bytes:
        return self.boundary.ocall("random_get", os.urandom, n, copied_in=n)

    # sockets

    def sock_connect(self, address: str, port: int) -> int:
        try:
            addr = str(ipaddress.ip_address(address))
        except ValueError:
            raise PolicyDenied(f"{address!r} is not an IP address") from None
        if self.policy.app_protocol_only and (addr, port) not in self.policy.endpoints:
            raise PolicyDenied(f"{addr}:{port} is not an allowlisted endpoint")
        if not address_allowed(self.policy, addr):
            raise PolicyDenied(f"{addr} is outside the allowed ranges")
        timeout = self.connect_timeout

        def connect():
            try:
                return socket.create_connection((addr, port), timeout=timeout)
            except OSError as e:
                raise ConnectionError(f"connect {addr}:{port}: {e}") from None

        sock = self.boundary.ocall("sock_connect", connect)
        return self._install(_Fd("socket", sock, f"{addr}:{port}"))

    def sock_send(self, fd: int, data: bytes) -> int:
        sock = self._fd(fd, "socket").obj
        return self.boundary.ocall("sock_send", sock.send, data, copied_out=len(data))

    def sock_recv(self, fd: int, n: int) -> bytes:
        sock = self._fd(fd, "socket").obj
        data = self.boundary.ocall("sock_recv", sock.recv, n)
        self.boundary._charge_copy(len(data), inbound=True)
        return data

    def sock_shutdown(self, fd: int, how: int = socket.SHUT_RDWR) -> None:
        sock = self._fd(fd, "socket").obj
        self.boundary.ocall("sock_shutdown", sock.shutdown, how)
