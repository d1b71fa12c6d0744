"""On-disk format of a protected file.

A backing file is a sequence of 4096-byte nodes addressed by *physical
index* (byte offset = index * 4096).  Three kinds exist:

root (physical 0)
    64-byte cleartext header followed by a 4032-byte sealed body holding
    126 child slots.  The header is::

        0   8  magic  b"TWNFSV01"
        8   4  format version (u32, currently 1)
        12  1  AEAD variant (u8, 1 = GCM / encrypt-then-MAC, 2 = CCM / MAC-then-encrypt)
        13  3  reserved, zero
        16  8  logical size in bytes (u64)
        24 12  body nonce, fresh on every root write
        36 16  body tag
        52 12  reserved, zero

    The body is sealed under the file's root key with associated data
    ``header[0:36] || header[52:64] || SHA-256(file id)``, so the header
    fields and the path the file was created under are all authenticated.

interior
    Sealed 4096-byte image of a 64-byte header (u8 kind = 1, 7 zero bytes,
    u64 interior number, 48 zero bytes) plus 126 child slots.

leaf
    Sealed 4096 bytes of file data.

A child slot is 32 bytes: a 16-byte node key then the node's 16-byte tag.
An all-zero slot means the child was never written and reads as zeros.
Interior and leaf nodes get a fresh random key every time they are
written, a constant all-zero nonce, and associated data
``u8 kind || u64le physical index``.

Geometry.  Of the 126 slots of every root or interior node, the first 96
point to data leaves and the last 30 to child interiors.  Interior nodes
are numbered breadth first (root = interior 0; interior *k* has children
``30k+1 .. 30k+30``) and leaf *L* hangs off interior ``L // 96``.  On disk
each interior is followed by its 96 leaves, so physical positions never
move as the file grows and the tree deepens only logarithmically.

All integers are little-endian.
"""

from __future__ import annotations

import struct

NODE_SIZE = 4096
HEADER_SIZE = 64
SLOT_SIZE = 32
SLOTS = (NODE_SIZE - HEADER_SIZE) // SLOT_SIZE  # 126
LEAF_SLOTS = 96
BRANCH_SLOTS = SLOTS - LEAF_SLOTS  # 30
GROUP = LEAF_SLOTS + 1

MAGIC = b"TWNFSV01"
FORMAT_VERSION = 1

KIND_ROOT = 0
KIND_INTERIOR = 1
KIND_LEAF = 2

ROOT_HEADER = struct.Struct("<8sIB3xQ12s16s12x")
INTERIOR_HEADER = struct.Struct("<B7xQ48x")
NODE_AAD = struct.Struct("<BQ")

assert ROOT_HEADER.size == HEADER_SIZE
assert INTERIOR_HEADER.size == HEADER_SIZE
assert HEADER_SIZE + SLOTS * SLOT_SIZE == NODE_SIZE

EMPTY_SLOT = bytes(SLOT_SIZE)


def leaf_phys(leaf: int) -> int:
    return (leaf // LEAF_SLOTS) * GROUP + 1 + leaf % LEAF_SLOTS


def interior_phys(k: int) -> int:
    return k * GROUP


def leaf_parent(leaf: int) -> tuple[int, int]:
    """(interior number, slot index) of a leaf's parent."""
    return divmod(leaf, LEAF_SLOTS)


def interior_parent(k: int) -> tuple[int, int]:
    if k <= 0:
        raise ValueError("the root has no parent")
    q, r = divmod(k - 1, BRANCH_SLOTS)
    return q, LEAF_SLOTS + r


def interior_ancestors(k: int) -> list[int]:
    """Interior numbers from ``k`` up to and including the root."""
    chain = [k]
    while k:
        k = interior_parent(k)[0]
        chain.append(k)
    return chain


def leaf_path(leaf: int) -> list[int]:
    """Interiors a read of ``leaf`` must authenticate, nearest first."""
    return interior_ancestors(leaf // LEAF_SLOTS)


def node_aad(kind: int, phys: int) -> bytes:
    return NODE_AAD.pack(kind, phys)


def root_aad(header: bytes, path_hash: bytes) -> bytes:
    return bytes(header[0:36]) + bytes(header[52:64]) + path_hash


def slot_offset(i: int) -> int:
    return HEADER_SIZE + i * SLOT_SIZE
