"""Merkle-tree protected file store."""

from .file import (
    BASELINE,
    DEFAULT_CACHE_CAPACITY,
    OPTIMIZED,
    RECORD_SIZE,
    FsMode,
    FsVariant,
    OpenMode,
    ProtectedFile,
    Whence,
    open_protected,
)

__all__ = [
    "BASELINE",
    "DEFAULT_CACHE_CAPACITY",
    "OPTIMIZED",
    "RECORD_SIZE",
    "FsMode",
    "FsVariant",
    "OpenMode",
    "ProtectedFile",
    "Whence",
    "open_protected",
]
