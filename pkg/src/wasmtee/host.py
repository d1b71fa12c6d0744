"""Embedding of an off-the-shelf Wasm engine (wasmtime).

The engine only executes guest code.  Every import the guest can reach is
defined here, in the ``wasi_snapshot_preview1`` namespace, and each one
passes the sandbox's call gate before doing anything.  A module importing
anything outside :data:`SURFACE` is refused at load time.

Errno mapping: a policy refusal becomes ``ACCES`` (2).  An integrity
failure is not reported to the guest at all: it aborts the run and
surfaces as :class:`~wasmtee.errors.IntegrityError` on the host.
"""

from __future__ import annotations

import io
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import wasmtime

from . import BUILD_ID
from .attestation import ArtifactForm, Measurement, measure_module, runtime_hash
from .boundary import LATENCY_PRESETS, Boundary
from .crypto import OwnerBinding, SealingContext
from .errors import (
    BadDescriptor,
    GuestTrap,
    HandlePoisoned,
    IntegrityError,
    InvalidSeek,
    MissingImport,
    NotFound,
    OutOfBudget,
    PolicyDenied,
    StorageError,
    ValidationError,
)
from .pfs import DEFAULT_CACHE_CAPACITY, OPTIMIZED, FsVariant
from .sandbox import KNOWN_CALLS, Policy, WasiSandbox

WASI_MODULE = "wasi_snapshot_preview1"
PAGE = 65536

ERRNO_SUCCESS = 0
ERRNO_ACCES = 2
ERRNO_BADF = 8
ERRNO_CONNREFUSED = 14
ERRNO_FAULT = 21
ERRNO_INVAL = 28
ERRNO_IO = 29
ERRNO_NOENT = 44

FILETYPE = {"stdio": 2, "dir": 3, "file": 4, "socket": 6}
RIGHT_FD_WRITE = 1 << 6
OFLAG_CREAT, OFLAG_TRUNC = 1, 8

_i32 = wasmtime.ValType.i32()
_i64 = wasmtime.ValType.i64()

# name -> (params, results)
SIGNATURES: dict[str, tuple[list, list]] = {
    "args_get": ([_i32, _i32], [_i32]),
    "args_sizes_get": ([_i32, _i32], [_i32]),
    "environ_get": ([_i32, _i32], [_i32]),
    "environ_sizes_get": ([_i32, _i32], [_i32]),
    "proc_exit": ([_i32], []),
    "clock_time_get": ([_i32, _i64, _i32], [_i32]),
    "random_get": ([_i32, _i32], [_i32]),
    "fd_read": ([_i32, _i32, _i32, _i32], [_i32]),
    "fd_write": ([_i32, _i32, _i32, _i32], [_i32]),
    "fd_seek": ([_i32, _i64, _i32, _i32], [_i32]),
    "fd_close": ([_i32], [_i32]),
    "fd_filestat_get": ([_i32, _i32], [_i32]),
    "fd_fdstat_get": ([_i32, _i32], [_i32]),
    "fd_prestat_get": ([_i32, _i32], [_i32]),
    "fd_prestat_dir_name": ([_i32, _i32, _i32], [_i32]),
    "path_open": ([_i32, _i32, _i32, _i32, _i32, _i64, _i64, _i32, _i32], [_i32]),
    # extension: (address string ptr, len, port, fd out)
    "sock_connect": ([_i32, _i32, _i32, _i32], [_i32]),
    "sock_send": ([_i32, _i32, _i32, _i32, _i32], [_i32]),
    "sock_recv": ([_i32, _i32, _i32, _i32, _i32, _i32], [_i32]),
    "sock_shutdown": ([_i32, _i32], [_i32]),
}
SURFACE = frozenset(SIGNATURES)
assert SURFACE == KNOWN_CALLS


@dataclass
class HostConfig:
    policy: Policy = field(default_factory=Policy)
    fs_variant: FsVariant = OPTIMIZED
    cache_capacity: int = DEFAULT_CACHE_CAPACITY
    memory_budget: int | None = None  # None: take the policy's budget
    latency_preset: str = "sgx-median"
    master_secret: bytes = bytes(32)
    owner_binding: OwnerBinding = OwnerBinding.ENCLAVE_BOUND
    cache_fstat: bool = False
    clock_source: Callable[[], int] | None = None
    stdout: io.RawIOBase | None = None
    stderr: io.RawIOBase | None = None

    @property
    def budget(self) -> int:
        return self.memory_budget if self.memory_budget is not None else self.policy.memory_budget

    def runtime_hash(self) -> bytes:
        return runtime_hash(BUILD_ID, self.policy.digest())

    def sealing_context(self) -> SealingContext:
        return SealingContext(self.master_secret, self.runtime_hash(), self.owner_binding)


class _ProcExit(Exception):
    def __init__(self, code: int):
        super().__init__(code)
        self.code = code


@dataclass
class GuestInstance:
    module: wasmtime.Module
    engine: wasmtime.Engine
    module_hash: bytes
    artifact_form: ArtifactForm
    config: HostConfig
    sandbox: WasiSandbox
    boundary: Boundary
    exit_code: int | None = None
    entered: bool = False

    @property
    def measurement(self) -> Measurement:
        return Measurement(self.config.runtime_hash(), self.module_hash, self.artifact_form)

    @property
    def stdout(self) -> bytes:
        sink = self.sandbox._sinks[1]
        return sink.getvalue() if isinstance(sink, io.BytesIO) else b""


def _check_imports(module: wasmtime.Module) -> None:
    for imp in module.imports:
        name = f"{imp.module}.{imp.name}"
        if imp.module != WASI_MODULE or imp.name not in SIGNATURES:
            raise MissingImport(f"module imports {name}, which this host does not provide")
        ty = imp.type
        params, results = SIGNATURES[imp.name]
        if not isinstance(ty, wasmtime.FuncType) or [str(p) for p in ty.params] != [str(p) for p in params] or [
            str(r) for r in ty.results
        ] != [str(r) for r in results]:
            raise MissingImport(f"{name} is imported with an incompatible type")


def _initial_memory(module: wasmtime.Module) -> int:
    total = 0
    for exp in module.exports:
        if isinstance(exp.type, wasmtime.MemoryType):
            total += exp.type.limits.min * PAGE
    return total


def load_module(source: bytes | str | os.PathLike, config: HostConfig | None = None) -> GuestInstance:
    """Validate, measure and prepare a module; nothing executes yet."""
    config = config or HostConfig()
    if isinstance(source, (bytes, bytearray)):
        data = bytes(source)
    else:
        data = Path(source).read_bytes()
    engine = wasmtime.Engine()
    try:
        if data.startswith(b"\x7fELF"):
            module = wasmtime.Module.deserialize(engine, data)
            form = ArtifactForm.AOT
        else:
            if not data.startswith(b"\0asm"):
                raise ValidationError("not a WebAssembly binary")
            module = wasmtime.Module(engine, data)
            form = ArtifactForm.BYTECODE
    except wasmtime.WasmtimeError as e:
        raise ValidationError(str(e)) from None
    _check_imports(module)
    boundary = Boundary(LATENCY_PRESETS[config.latency_preset])
    sandbox = WasiSandbox(
        config.policy,
        boundary,
        config.sealing_context(),
        fs_variant=config.fs_variant,
        cache_capacity=config.cache_capacity,
        cache_fstat=config.cache_fstat,
        clock_source=config.clock_source,
        stdout=config.stdout,
        stderr=config.stderr,
    )
    return GuestInstance(module, engine, measure_module(data), form, config, sandbox, boundary)


class _Bindings:
    """Host functions for one guest run."""

    def __init__(self, inst: GuestInstance, argv: list[str], env: dict[str, str]):
        self.inst = inst
        self.sb = inst.sandbox
        self.args = [a.encode() + b"\0" for a in argv]
        self.env = [f"{k}={v}".encode() + b"\0" for k, v in env.items()]

    # memory helpers

    @staticmethod
    def _mem(caller) -> wasmtime.Memory:
        mem = caller.get("memory")
        if not isinstance(mem, wasmtime.Memory):
            raise GuestTrap("guest exports no memory")
        return mem

    def _read(self, caller, ptr: int, n: int) -> bytes:
        mem = self._mem(caller)
        if ptr < 0 or n < 0 or ptr + n > mem.data_len(caller):
            raise _Fault()
        return bytes(mem.read(caller, ptr, ptr + n))

    def _write(self, caller, ptr: int, data: bytes) -> None:
        mem = self._mem(caller)
        if ptr < 0 or ptr + len(data) > mem.data_len(caller):
            raise _Fault()
        mem.write(caller, data, ptr)

    def _iovecs(self, caller, iovs: int, count: int) -> list[tuple[int, int]]:
        raw = self._read(caller, iovs, 8 * count)
        return [struct.unpack_from("<II", raw, 8 * i) for i in range(count)]

    def _u32(self, caller, ptr: int, v: int) -> None:
        self._write(caller, ptr, struct.pack("<I", v))

    def _u64(self, caller, ptr: int, v: int) -> None:
        self._write(caller, ptr, struct.pack("<Q", v))

    def _str(self, caller, ptr: int, n: int) -> str:
        return self._read(caller, ptr, n).decode("utf-8", errors="strict")

    # calls

    def args_sizes_get(self, c, argc, bufsize):
        self._u32(c, argc, len(self.args))
        self._u32(c, bufsize, sum(map(len, self.args)))

    def args_get(self, c, argv, buf):
        self._strings(c, self.args, argv, buf)

    def environ_sizes_get(self, c, count, bufsize):
        self._u32(c, count, len(self.env))
        self._u32(c, bufsize, sum(map(len, self.env)))

    def environ_get(self, c, envp, buf):
        self._strings(c, self.env, envp, buf)

    def _strings(self, c, items, ptrs, buf):
        for i, s in enumerate(items):
            self._u32(c, ptrs + 4 * i, buf)
            self._write(c, buf, s)
            buf += len(s)

    def proc_exit(self, c, code):
        raise _ProcExit(code)

    def clock_time_get(self, c, clock_id, precision, out):
        self._u64(c, out, self.sb.clock_time_get(clock_id, precision))

    def random_get(self, c, buf, n):
        self._write(c, buf, self.sb.random_get(n))

    def fd_read(self, c, fd, iovs, count, nread):
        vec = self._iovecs(c, iovs, count)
        parts = self.sb.fd_read(fd, [n for _, n in vec])
        total = 0
        for (ptr, _), data in zip(vec, parts):
            self._write(c, ptr, data)
            total += len(data)
        self._u32(c, nread, total)

    def fd_write(self, c, fd, iovs, count, nwritten):
        segs = [self._read(c, ptr, n) for ptr, n in self._iovecs(c, iovs, count)]
        self._u32(c, nwritten, self.sb.fd_write(fd, segs))

    def fd_seek(self, c, fd, offset, whence, newoffset):
        if whence not in (0, 1, 2):
            raise InvalidSeek(f"bad whence {whence}")
        self._u64(c, newoffset, self.sb.fd_seek(fd, offset, whence))

    def fd_close(self, c, fd):
        self.sb.fd_close(fd)

    def fd_filestat_get(self, c, fd, buf):
        size = self.sb.fd_filestat_get(fd)
        stat = bytearray(64)
        stat[16] = FILETYPE["file"]
        struct.pack_into("<QQ", stat, 24, 1, size)
        self._write(c, buf, bytes(stat))

    def fd_fdstat_get(self, c, fd, buf):
        kind = self.sb.fd_fdstat_get(fd)
        self._write(c, buf, struct.pack("<BxHxxxxQQ", FILETYPE[kind], 0, (1 << 64) - 1, (1 << 64) - 1))

    def fd_prestat_get(self, c, fd, buf):
        name = self.sb.fd_prestat_get(fd).encode()
        self._write(c, buf, struct.pack("<BxxxI", 0, len(name)))

    def fd_prestat_dir_name(self, c, fd, ptr, n):
        name = self.sb.fd_prestat_dir_name(fd).encode()
        self._write(c, ptr, name[:n])

    def path_open(self, c, dirfd, dirflags, path_ptr, path_len, oflags, rights, inheriting, fdflags, fd_out):
        path = self._str(c, path_ptr, path_len)
        fd = self.sb.path_open(
            dirfd,
            path,
            create=bool(oflags & OFLAG_CREAT),
            truncate=bool(oflags & OFLAG_TRUNC),
            write=bool(rights & RIGHT_FD_WRITE),
        )
        self._u32(c, fd_out, fd)

    def sock_connect(self, c, addr_ptr, addr_len, port, fd_out):
        fd = self.sb.sock_connect(self._str(c, addr_ptr, addr_len), port)
        self._u32(c, fd_out, fd)

    def sock_send(self, c, fd, iovs, count, flags, sent_out):
        data = b"".join(self._read(c, p, n) for p, n in self._iovecs(c, iovs, count))
        self._u32(c, sent_out, self.sb.sock_send(fd, data))

    def sock_recv(self, c, fd, iovs, count, flags, len_out, flags_out):
        vec = self._iovecs(c, iovs, count)
        data = self.sb.sock_recv(fd, sum(n for _, n in vec))
        pos = 0
        for ptr, n in vec:
            self._write(c, ptr, data[pos : pos + n])
            pos += n
        self._u32(c, len_out, len(data))
        self._u32(c, flags_out, 0)

    def sock_shutdown(self, c, fd, how):
        self.sb.sock_shutdown(fd, {0: 0, 1: 1}.get(how, 2))

    # linking

    def wrap(self, name: str):
        impl = getattr(self, name)
        sb = self.sb
        returns_errno = bool(SIGNATURES[name][1])

        def host_fn(caller, *args):
            try:
                sb.gate(name)
            except PolicyDenied:
                if not returns_errno:
                    raise GuestTrap(f"{name} is disabled by policy") from None
                return ERRNO_ACCES
            if not returns_errno:
                return impl(caller, *args)
            try:
                impl(caller, *args)
                return ERRNO_SUCCESS
            except PolicyDenied:
                return ERRNO_ACCES
            except (BadDescriptor, io.UnsupportedOperation):
                return ERRNO_BADF
            except NotFound:
                return ERRNO_NOENT
            except (InvalidSeek, ValueError):
                return ERRNO_INVAL
            except ConnectionError:
                return ERRNO_CONNREFUSED
            except _Fault:
                return ERRNO_FAULT
            except (HandlePoisoned, StorageError):
                return ERRNO_IO

        return host_fn

    def linker(self, engine: wasmtime.Engine) -> wasmtime.Linker:
        linker = wasmtime.Linker(engine)
        self.defined: set[str] = set()
        for name, (params, results) in SIGNATURES.items():
            linker.define_func(WASI_MODULE, name, wasmtime.FuncType(params, results), self.wrap(name), access_caller=True)
            self.defined.add(name)
        return linker


class _Fault(Exception):
    pass


def bound_surface(inst: GuestInstance) -> set[str]:
    """Names the host links for a guest; used to audit the call surface."""
    b = _Bindings(inst, [], {})
    b.linker(inst.engine)
    return set(b.defined)


def run(inst: GuestInstance, argv: list[str] | None = None, env: dict[str, str] | None = None) -> int:
    """Enter the guest once through its ``_start`` export and return its exit code.

    Raises :class:`OutOfBudget` when the module needs more memory than the
    budget, :class:`GuestTrap` for other traps and :class:`IntegrityError`
    when protected storage fails authentication.
    """
    if inst.entered:
        raise GuestTrap("a guest instance is entered exactly once")
    inst.entered = True
    budget = inst.config.budget
    bindings = _Bindings(inst, list(argv or ["guest"]), dict(env or {}))
    store = wasmtime.Store(inst.engine)
    store.set_limits(memory_size=budget)
    inst.boundary.ecall()
    if _initial_memory(inst.module) > budget:
        raise OutOfBudget(f"module needs {_initial_memory(inst.module)} bytes of memory, budget is {budget}")
    integrity_failed = False
    try:
        try:
            instance = bindings.linker(inst.engine).instantiate(store, inst.module)
        except wasmtime.WasmtimeError as e:
            raise GuestTrap(f"instantiation failed: {e}") from None
        start = instance.exports(store).get("_start")
        if not isinstance(start, wasmtime.Func):
            raise GuestTrap("module has no _start export")
        try:
            start(store)
            inst.exit_code = 0
        except _ProcExit as e:
            inst.exit_code = e.code
        except IntegrityError:
            integrity_failed = True
            raise
        except (wasmtime.Trap, wasmtime.WasmtimeError) as e:
            mem = instance.exports(store).get("memory")
            if isinstance(mem, wasmtime.Memory) and mem.data_len(store) + PAGE > budget:
                raise OutOfBudget(f"guest trapped with memory exhausted at the {budget}-byte budget: {e}") from None
            raise GuestTrap(str(e)) from None
    finally:
        if integrity_failed:
            for fd in [fd for fd, e in inst.sandbox.fds.items() if e.kind == "file"]:
                inst.sandbox.fds[fd].obj.poisoned = True
        inst.sandbox.close_all()
    return inst.exit_code
