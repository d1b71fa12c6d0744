"""Exception hierarchy shared by every layer of the runtime."""

from __future__ import annotations


class WasmTeeError(Exception):
    """Base class for all runtime errors."""


class IntegrityError(WasmTeeError):
    """Authenticated decryption or a binding check failed."""


class HandlePoisoned(WasmTeeError):
    """The handle saw an integrity failure earlier and refuses further use."""


class InvalidSeek(WasmTeeError, ValueError):
    pass


class StorageError(WasmTeeError, OSError):
    """Host storage failed underneath the protected file system."""


class NotFound(WasmTeeError, FileNotFoundError):
    pass


class PolicyDenied(WasmTeeError, PermissionError):
    pass


class PolicyError(WasmTeeError):
    """A policy document is malformed."""


class KeyUnavailable(WasmTeeError):
    pass


class MalformedQuote(WasmTeeError, ValueError):
    pass


class ValidationError(WasmTeeError):
    """The engine rejected the module bytes."""


class MissingImport(WasmTeeError):
    pass


class GuestTrap(WasmTeeError):
    pass


class OutOfBudget(GuestTrap):
    """The guest needed more linear memory than the fixed budget allows."""



class BadDescriptor(WasmTeeError):
    pass
