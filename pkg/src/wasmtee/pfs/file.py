"""Protected file handles over an untrusted backing file."""

from __future__ import annotations

import enum
import io
import os
from collections import OrderedDict
from dataclasses import dataclass
from typing import Iterable, Sequence

from ..boundary import Boundary, StorageOp
from ..crypto import (
    ZERO_NONCE,
    AeadVariant,
    SealingContext,
    derive_root_key,
    path_digest,
    seal,
    unseal_joined,
)
from ..errors import HandlePoisoned, IntegrityError, InvalidSeek, StorageError, WasmTeeError
from . import layout as L

DEFAULT_CACHE_CAPACITY = 48
MIN_CACHE_CAPACITY = 4

# Baseline node record: ciphertext, tag, plaintext, then bookkeeping fields.
_CIPHER = slice(0, L.NODE_SIZE)
_SEALED = slice(0, L.NODE_SIZE + 16)
_TAG = slice(L.NODE_SIZE, L.NODE_SIZE + 16)
_PLAIN = slice(L.NODE_SIZE + 16, 2 * L.NODE_SIZE + 16)
RECORD_SIZE = 2 * L.NODE_SIZE + 64


class OpenMode(enum.Enum):
    READ = "r"
    READ_WRITE = "r+"
    CREATE_TRUNCATE = "w+"


class FsMode(enum.Enum):
    BASELINE = "baseline"
    OPTIMIZED = "optimized"


class Whence(enum.IntEnum):
    SET = 0
    CUR = 1
    END = 2


@dataclass(frozen=True)
class FsVariant:
    """How nodes are handled on their way in and out of the cache.

    ``BASELINE`` clears a full node record on admission, erases plaintext on
    eviction and copies ciphertext into the enclave before decrypting.
    ``OPTIMIZED`` does none of that and decrypts straight from the host's
    buffer.  ``aead`` picks the cipher for newly created files; it defaults
    to GCM for the baseline and CCM for the optimized mode.
    """

    mode: FsMode = FsMode.OPTIMIZED
    aead: AeadVariant | None = None

    @property
    def cipher(self) -> AeadVariant:
        if self.aead is not None:
            return self.aead
        if self.mode is FsMode.BASELINE:
            return AeadVariant.ENCRYPT_THEN_MAC
        return AeadVariant.MAC_THEN_ENCRYPT

    @classmethod
    def parse(cls, mode: str, aead: str | None = None) -> FsVariant:
        return cls(FsMode(mode.lower()), AeadVariant.parse(aead) if aead else None)


BASELINE = FsVariant(FsMode.BASELINE)
OPTIMIZED = FsVariant(FsMode.OPTIMIZED)


class _Node:
    __slots__ = ("kind", "number", "phys", "plain", "record", "dirty", "children", "parent")

    def __init__(self, kind, number, phys, plain, record, parent):
        self.kind = kind
        self.number = number
        self.phys = phys
        self.plain = plain
        self.record = record
        self.parent = parent
        self.dirty = False
        self.children = 0

    def slot(self, i: int) -> bytes:
        off = L.slot_offset(i)
        return bytes(self.plain[off : off + L.SLOT_SIZE])

    def writable(self):
        if isinstance(self.plain, bytes):
            self.plain = bytearray(self.plain)
        return self.plain

    def set_slot(self, i: int, key: bytes, tag: bytes) -> None:
        self.writable()
        off = L.slot_offset(i)
        self.plain[off : off + 16] = key
        self.plain[off + 16 : off + 32] = tag


class ProtectedFile:
    """An open protected file.

    Not thread safe; one handle belongs to one thread at a time.  The root
    node stays resident for the handle's lifetime and does not count
    against ``cache_capacity``.
    """

    def __init__(
        self,
        boundary: Boundary,
        path: str,
        file_id: str,
        root_key: bytes,
        mode: OpenMode,
        variant: FsVariant,
        cache_capacity: int,
    ):
        if cache_capacity < MIN_CACHE_CAPACITY:
            raise ValueError(f"cache capacity must be at least {MIN_CACHE_CAPACITY}")
        self.boundary = boundary
        self.path = path
        self.file_id = file_id
        self.mode = mode
        self.variant = variant
        self.cache_capacity = cache_capacity
        self.position = 0
        self.poisoned = False
        self.closed = False
        self._root_key = root_key
        self._path_hash = path_digest(file_id)
        self._baseline = variant.mode is FsMode.BASELINE
        self._cache: OrderedDict[int, _Node] = OrderedDict()
        self._pinned: set[int] = set()
        self._stat_valid = True
        self._host = None
        self.aead = variant.cipher
        self.logical_size = 0
        self._root: _Node | None = None

    # opening

    def _open(self) -> None:
        b = self.boundary
        creating = self.mode is OpenMode.CREATE_TRUNCATE
        self._host = b.ocall_storage(StorageOp.OPEN, self.path, create=creating, truncate=creating)
        if creating:
            self._root = self._new_record(L.KIND_ROOT, 0, 0, None)
            self._root.dirty = True
            return
        record = self._new_record(L.KIND_ROOT, 0, 0, None)
        if self._baseline:
            buf = memoryview(record.record)[_CIPHER]
            b.ocall_storage(StorageOp.READ_NODE, self._host, 0, into=buf)
            image = buf
        else:
            image = b.ocall_storage(StorageOp.READ_NODE, self._host, 0).buffer
        try:
            magic, version, variant, size, nonce, tag = L.ROOT_HEADER.unpack_from(image)
            if magic != L.MAGIC:
                raise IntegrityError("not a protected file (bad magic)")
            if version != L.FORMAT_VERSION:
                raise IntegrityError(f"unsupported format version {version}")
            try:
                aead = AeadVariant(variant)
            except ValueError:
                raise IntegrityError(f"bad cipher id {variant}") from None
            aad = L.root_aad(image[: L.HEADER_SIZE], self._path_hash)
            body = unseal_joined(aead, self._root_key, nonce, aad, b"".join((image[L.HEADER_SIZE :], tag)))
        except IntegrityError:
            self.poisoned = True
            self._release()
            raise
        record.plain[L.HEADER_SIZE :] = body
        self._root = record
        self.aead = aead
        self.logical_size = size

    # node management

    def _new_record(self, kind: int, number: int, phys: int, parent: _Node | None) -> _Node:
        if self._baseline:
            rec = bytearray(RECORD_SIZE)
            self.boundary.track_clear(RECORD_SIZE)
            plain = memoryview(rec)[_PLAIN]
        else:
            rec = None
            plain = bytearray(L.NODE_SIZE)
        return _Node(kind, number, phys, plain, rec, parent)

    def _admit(self, node: _Node) -> _Node:
        self._cache[node.phys] = node
        self._pinned.add(node.phys)
        if node.parent is not self._root:
            node.parent.children += 1
        return node

    def _make_room(self) -> None:
        while len(self._cache) >= self.cache_capacity:
            for victim in self._cache.values():
                if victim.children == 0 and victim.phys not in self._pinned:
                    break
            else:
                raise StorageError(0, "node cache too small for the tree depth")
            self._evict(victim)

    def _evict(self, node: _Node) -> None:
        if node.dirty:
            self._store(node)
        del self._cache[node.phys]
        if node.parent is not self._root:
            node.parent.children -= 1
        self._erase(node)

    def _erase(self, node: _Node) -> None:
        if self._baseline:
            node.plain[:] = bytes(L.NODE_SIZE)
            self.boundary.track_clear(L.NODE_SIZE)

    def _fetch(self, kind: int, number: int, phys: int, parent: _Node, slot: bytes) -> _Node:
        self._make_room()
        key, tag = slot[:16], slot[16:]
        aad = L.node_aad(kind, phys)
        b = self.boundary
        node = self._new_record(kind, number, phys, parent)
        try:
            if self._baseline:
                rec = memoryview(node.record)
                b.ocall_storage(StorageOp.READ_NODE, self._host, phys, into=rec[_CIPHER])
                rec[_TAG] = tag
                rec[_PLAIN] = unseal_joined(self.aead, key, ZERO_NONCE, aad, rec[_SEALED])
            else:
                view = b.ocall_storage(StorageOp.READ_NODE, self._host, phys)
                node.plain = unseal_joined(self.aead, key, ZERO_NONCE, aad, b"".join((view.buffer, tag)))
            if kind == L.KIND_INTERIOR:
                hkind, hnum = L.INTERIOR_HEADER.unpack_from(node.plain)
                if hkind != L.KIND_INTERIOR or hnum != number:
                    raise IntegrityError(f"interior node {number} carries a foreign header")
        except IntegrityError:
            self.poisoned = True
            raise
        return self._admit(node)

    def _create(self, kind: int, number: int, phys: int, parent: _Node) -> _Node:
        self._make_room()
        node = self._new_record(kind, number, phys, parent)
        if kind == L.KIND_INTERIOR:
            node.plain[: L.HEADER_SIZE] = L.INTERIOR_HEADER.pack(L.KIND_INTERIOR, number)
        node.dirty = True
        return self._admit(node)

    def _interior(self, k: int, create: bool) -> _Node | None:
        if k == 0:
            return self._root
        phys = L.interior_phys(k)
        node = self._cache.get(phys)
        if node is not None:
            self._cache.move_to_end(phys)
            self._pinned.add(phys)
            return node
        pk, si = L.interior_parent(k)
        parent = self._interior(pk, create)
        if parent is None:
            return None
        slot = parent.slot(si)
        if slot == L.EMPTY_SLOT:
            return self._create(L.KIND_INTERIOR, k, phys, parent) if create else None
        return self._fetch(L.KIND_INTERIOR, k, phys, parent, slot)

    def _leaf(self, leaf: int, create: bool, overwrite: bool = False) -> _Node | None:
        """Bring leaf ``leaf`` into the cache, or return None for a hole."""
        self._pinned.clear()
        phys = L.leaf_phys(leaf)
        node = self._cache.get(phys)
        if node is not None:
            self._cache.move_to_end(phys)
            return node
        k, si = L.leaf_parent(leaf)
        parent = self._interior(k, create)
        if parent is None:
            return None
        slot = parent.slot(si)
        if slot == L.EMPTY_SLOT or overwrite:
            return self._create(L.KIND_LEAF, leaf, phys, parent) if create else None
        return self._fetch(L.KIND_LEAF, leaf, phys, parent, slot)

    def _store(self, node: _Node) -> None:
        key = os.urandom(16)
        cipher, tag = seal(self.aead, key, ZERO_NONCE, L.node_aad(node.kind, node.phys), node.plain)
        self.boundary.ocall_storage(StorageOp.WRITE_NODE, self._host, node.phys, cipher)
        if node.kind == L.KIND_LEAF:
            si = L.leaf_parent(node.number)[1]
        else:
            si = L.interior_parent(node.number)[1]
        node.parent.set_slot(si, key, tag)
        node.parent.dirty = True
        node.dirty = False

    def _store_root(self) -> None:
        nonce = os.urandom(12)
        header = bytearray(
            L.ROOT_HEADER.pack(L.MAGIC, L.FORMAT_VERSION, self.aead, self.logical_size, nonce, bytes(16))
        )
        aad = L.root_aad(header, self._path_hash)
        body, tag = self._seal_root_body(nonce, aad)
        header[36:52] = tag
        self.boundary.ocall_storage(StorageOp.WRITE_NODE, self._host, 0, bytes(header) + body)
        self._root.dirty = False

    def _seal_root_body(self, nonce: bytes, aad: bytes) -> tuple[bytes, bytes]:
        # body is 4032 bytes, inside the 4096-byte AEAD limit
        return seal(self.aead, self._root_key, nonce, aad, self._root.plain[L.HEADER_SIZE :])

    # guards

    def _check(self, write: bool = False) -> None:
        if self.closed:
            raise ValueError("I/O operation on closed protected file")
        if self.poisoned:
            raise HandlePoisoned(self.path)
        if write and self.mode is OpenMode.READ:
            raise io.UnsupportedOperation("file opened read-only")

    # public API

    def read(self, count: int = -1) -> bytes:
        """Read up to ``count`` bytes (all remaining if negative)."""
        self._check()
        pos = self.position
        avail = max(0, self.logical_size - pos)
        n = avail if count < 0 else min(count, avail)
        if n <= 0:
            return b""
        out = bytearray(n)
        done = 0
        while done < n:
            leaf, off = divmod(pos + done, L.NODE_SIZE)
            chunk = min(L.NODE_SIZE - off, n - done)
            node = self._leaf(leaf, create=False)
            if node is not None:
                out[done : done + chunk] = node.plain[off : off + chunk]
            done += chunk
        self.position = pos + n
        return bytes(out)

    def write(self, data) -> int:
        """Write all of ``data`` at the current position.

        Writing past the end first extends the file with zero bytes; gap
        leaves stay unallocated until something lands in them.
        """
        self._check(write=True)
        mv = memoryview(data).cast("B")
        n = len(mv)
        if n == 0:
            return 0
        pos = self.position
        done = 0
        while done < n:
            leaf, off = divmod(pos + done, L.NODE_SIZE)
            chunk = min(L.NODE_SIZE - off, n - done)
            node = self._leaf(leaf, create=True, overwrite=(chunk == L.NODE_SIZE))
            node.writable()[off : off + chunk] = mv[done : done + chunk]
            node.dirty = True
            done += chunk
        self.position = pos + n
        if self.position > self.logical_size:
            self.logical_size = self.position
            self._root.dirty = True
        return n

    def seek(self, offset: int, whence: Whence | int = Whence.SET) -> int:
        self._check()
        whence = Whence(whence)
        base = {Whence.SET: 0, Whence.CUR: self.position, Whence.END: self.logical_size}[whence]
        target = base + offset
        if target < 0:
            raise InvalidSeek(f"negative position {target}")
        self.position = target
        return target

    def tell(self) -> int:
        return self.position

    def readv(self, lengths: Iterable[int]) -> list[bytes]:
        """Vectored read: one scalar read per segment.

        If a segment fails, the error is re-raised with ``bytes_done`` set
        to the number of bytes the earlier segments delivered.
        """
        out: list[bytes] = []
        done = 0
        for n in lengths:
            try:
                chunk = self.read(n)
            except WasmTeeError as e:
                e.bytes_done = done
                raise
            out.append(chunk)
            done += len(chunk)
        return out

    def writev(self, segments: Sequence) -> int:
        total = 0
        for seg in segments:
            try:
                total += self.write(seg)
            except WasmTeeError as e:
                e.bytes_done = total
                raise
        return total

    def flush(self) -> None:
        """Seal every dirty node bottom-up and rewrite the root."""
        self._check()
        for node in [n for n in self._cache.values() if n.kind == L.KIND_LEAF and n.dirty]:
            self._store(node)
        interiors = sorted(
            (n for n in self._cache.values() if n.kind == L.KIND_INTERIOR), key=lambda n: n.number, reverse=True
        )
        for node in interiors:
            # children always carry larger numbers, so a parent dirtied here is visited later
            if node.dirty:
                self._store(node)
        if self._root.dirty:
            self._store_root()

    def size(self) -> int:
        """Logical size, asking the host for file metadata every time."""
        self._check()
        self.boundary.ocall_storage(StorageOp.STAT, self._host)
        return self.logical_size

    def size_cached(self) -> int:
        """Logical size served from the root metadata.

        Crosses the boundary only after :meth:`mark_external_modification`.
        """
        self._check()
        if not self._stat_valid:
            self.boundary.ocall_storage(StorageOp.STAT, self._host)
            self._stat_valid = True
        return self.logical_size

    def mark_external_modification(self) -> None:
        self._stat_valid = False

    def close(self) -> None:
        if self.closed:
            return
        try:
            if not self.poisoned:
                self.flush()
        finally:
            self._release()

    def _release(self) -> None:
        for node in self._cache.values():
            self._erase(node)
        self._cache.clear()
        if self._root is not None:
            self._erase(self._root)
        if self._host is not None:
            self.boundary.ocall_storage(StorageOp.CLOSE, self._host)
        self.closed = True

    # introspection used by tests and benchmarks

    @property
    def cached_nodes(self) -> int:
        return len(self._cache)

    def is_cached(self, phys: int) -> bool:
        return phys in self._cache

    def __enter__(self) -> ProtectedFile:
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def __repr__(self) -> str:
        return (
            f"ProtectedFile({self.path!r}, mode={self.mode.value}, variant={self.variant.mode.value}/"
            f"{self.aead.short}, size={self.logical_size}, pos={self.position})"
        )


def open_protected(
    path: str | os.PathLike,
    mode: OpenMode = OpenMode.READ,
    *,
    ctx: SealingContext | None = None,
    key: bytes | None = None,
    file_id: str | None = None,
    variant: FsVariant = OPTIMIZED,
    cache_capacity: int = DEFAULT_CACHE_CAPACITY,
    boundary: Boundary | None = None,
) -> ProtectedFile:
    """Open or create a protected file.

    The root key is derived from ``ctx`` and ``file_id`` unless an explicit
    ``key`` is given.  ``file_id`` names the file independently of where
    the host keeps it; the sandbox passes the guest-visible path.  It
    defaults to the absolute host path.
    """
    path = os.fspath(path)
    if file_id is None:
        file_id = os.path.abspath(path)
    if key is None:
        if ctx is None:
            raise ValueError("either a sealing context or an explicit key is required")
        key = derive_root_key(ctx, file_id)
    elif len(key) != 16:
        raise ValueError("explicit keys are 16 bytes")
    h = ProtectedFile(boundary or Boundary(), path, file_id, key, OpenMode(mode), variant, cache_capacity)
    h._open()
    return h
