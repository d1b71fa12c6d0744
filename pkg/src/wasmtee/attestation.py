"""Simulated remote attestation.

Load time: the runtime hashes the exact module bytes it loaded.  Quote
time: it folds optional user data (typically a public key) into a second
hash, ``report_data``, and has the device key sign the measurement together
with that value.  A relying party checks the signature against the device
trust anchor and compares the measured values with what it expects.

``report_data = SHA-256(u32le(32) || module_hash || u32le(len(ud)) || ud)``

``runtime_hash = SHA-256("wasmtee/runtime/v1" || u32le(len(build)) || build || policy_hash)``

Quote wire format: ``b"TWQUOTE1"`` followed by seven fields, each a u32le
length and its bytes, in this order:

=============  =====  =======================================
runtime_hash    32
module_hash     32
report_data     32
timestamp        8    u64le, nanoseconds since the epoch
artifact_form    1    0 = Wasm bytecode, 1 = AOT artifact
signer_id       32    SHA-256 of the raw Ed25519 public key
signature       64    Ed25519 over every preceding byte
=============  =====  =======================================

Ed25519 signatures are deterministic, so a fixed key and inputs give a
byte-identical quote.
"""

from __future__ import annotations

import enum
import hashlib
import struct
import time
from dataclasses import dataclass
from pathlib import Path

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives import serialization
from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PrivateKey, Ed25519PublicKey

from .errors import KeyUnavailable, MalformedQuote

QUOTE_MAGIC = b"TWQUOTE1"
RUNTIME_LABEL = b"wasmtee/runtime/v1"
MAX_USER_DATA = 64

_U32 = struct.Struct("<I")
_FIELD_SIZES = (32, 32, 32, 8, 1, 32, 64)


class ArtifactForm(enum.IntEnum):
    BYTECODE = 0
    AOT = 1


def measure_module(module_bytes: bytes) -> bytes:
    return hashlib.sha256(module_bytes).digest()


def runtime_hash(build_id: str, policy_hash: bytes) -> bytes:
    build = build_id.encode()
    return hashlib.sha256(RUNTIME_LABEL + _U32.pack(len(build)) + build + policy_hash).digest()


def report_data(module_hash: bytes, user_data: bytes = b"") -> bytes:
    return hashlib.sha256(
        _U32.pack(len(module_hash)) + module_hash + _U32.pack(len(user_data)) + user_data
    ).digest()


@dataclass(frozen=True)
class Measurement:
    runtime_hash: bytes
    module_hash: bytes
    artifact_form: ArtifactForm = ArtifactForm.BYTECODE


def _raw_public(pub: Ed25519PublicKey) -> bytes:
    return pub.public_bytes(serialization.Encoding.Raw, serialization.PublicFormat.Raw)


@dataclass(frozen=True)
class TrustAnchor:
    """Public half of the device key, as distributed to verifiers."""

    public_key: Ed25519PublicKey

    @property
    def key_id(self) -> bytes:
        return hashlib.sha256(_raw_public(self.public_key)).digest()

    def to_pem(self) -> bytes:
        return self.public_key.public_bytes(
            serialization.Encoding.PEM, serialization.PublicFormat.SubjectPublicKeyInfo
        )

    @classmethod
    def from_pem(cls, data: bytes) -> TrustAnchor:
        key = serialization.load_pem_public_key(data)
        if not isinstance(key, Ed25519PublicKey):
            raise ValueError("trust anchor must be an Ed25519 public key")
        return cls(key)

    @classmethod
    def load(cls, path: str | Path) -> TrustAnchor:
        return cls.from_pem(Path(path).read_bytes())


class DeviceKey:
    """The simulated platform attestation key (self-signed root)."""

    def __init__(self, private_key: Ed25519PrivateKey):
        self._key = private_key

    @classmethod
    def generate(cls) -> DeviceKey:
        return cls(Ed25519PrivateKey.generate())

    @classmethod
    def from_seed(cls, seed: bytes) -> DeviceKey:
        return cls(Ed25519PrivateKey.from_private_bytes(seed))

    @classmethod
    def load(cls, path: str | Path) -> DeviceKey:
        try:
            data = Path(path).read_bytes()
        except OSError as e:
            raise KeyUnavailable(f"device key {path}: {e.strerror}") from None
        key = serialization.load_pem_private_key(data, password=None)
        if not isinstance(key, Ed25519PrivateKey):
            raise KeyUnavailable("device key must be Ed25519")
        return cls(key)

    def to_pem(self) -> bytes:
        return self._key.private_bytes(
            serialization.Encoding.PEM, serialization.PrivateFormat.PKCS8, serialization.NoEncryption()
        )

    def anchor(self) -> TrustAnchor:
        return TrustAnchor(self._key.public_key())

    def sign(self, message: bytes) -> bytes:
        return self._key.sign(message)


@dataclass(frozen=True)
class Quote:
    measurement: Measurement
    report_data: bytes
    timestamp: int
    signer_id: bytes
    signature: bytes

    def signed_part(self) -> bytes:
        m = self.measurement
        fields = (
            m.runtime_hash,
            m.module_hash,
            self.report_data,
            struct.pack("<Q", self.timestamp),
            bytes([m.artifact_form]),
            self.signer_id,
        )
        return QUOTE_MAGIC + b"".join(_U32.pack(len(f)) + f for f in fields)

    def to_bytes(self) -> bytes:
        return self.signed_part() + _U32.pack(len(self.signature)) + self.signature

    def to_hex(self) -> str:
        return self.to_bytes().hex()

    @classmethod
    def from_bytes(cls, data: bytes) -> Quote:
        if not data.startswith(QUOTE_MAGIC):
            raise MalformedQuote("bad quote magic")
        pos = len(QUOTE_MAGIC)
        fields = []
        for size in _FIELD_SIZES:
            if pos + 4 > len(data):
                raise MalformedQuote("truncated quote")
            (n,) = _U32.unpack_from(data, pos)
            if n != size:
                raise MalformedQuote(f"field length {n}, expected {size}")
            pos += 4
            if pos + n > len(data):
                raise MalformedQuote("truncated quote")
            fields.append(bytes(data[pos : pos + n]))
            pos += n
        if pos != len(data):
            raise MalformedQuote("trailing bytes after quote")
        rt, mod, rd, ts, form, signer, sig = fields
        try:
            form = ArtifactForm(form[0])
        except ValueError:
            raise MalformedQuote(f"unknown artifact form {form[0]}") from None
        q = cls(Measurement(rt, mod, form), rd, struct.unpack("<Q", ts)[0], signer, sig)
        if q.to_bytes() != bytes(data):
            raise MalformedQuote("non-canonical quote encoding")
        return q

    @classmethod
    def from_hex(cls, text: str) -> Quote:
        try:
            return cls.from_bytes(bytes.fromhex(text.strip()))
        except ValueError as e:
            if isinstance(e, MalformedQuote):
                raise
            raise MalformedQuote(f"bad hex: {e}") from None


def quote_generate(
    device_key: DeviceKey | None,
    measurement: Measurement,
    user_data: bytes = b"",
    timestamp: int | None = None,
) -> Quote:
    if device_key is None:
        raise KeyUnavailable("no device key provisioned")
    if len(user_data) > MAX_USER_DATA:
        raise ValueError(f"user data is limited to {MAX_USER_DATA} bytes")
    if timestamp is None:
        timestamp = time.time_ns()
    unsigned = Quote(
        measurement,
        report_data(measurement.module_hash, user_data),
        timestamp,
        device_key.anchor().key_id,
        b"",
    )
    sig = device_key.sign(unsigned.signed_part())
    return Quote(unsigned.measurement, unsigned.report_data, timestamp, unsigned.signer_id, sig)


@dataclass(frozen=True)
class Verdict:
    passed: bool
    reason: str | None = None

    def __bool__(self) -> bool:
        return self.passed

    def __str__(self) -> str:
        return "PASS" if self.passed else f"FAIL({self.reason})"


PASS = Verdict(True)


def quote_verify(
    quote: Quote | bytes,
    anchor: TrustAnchor,
    *,
    runtime_hash: bytes | None = None,
    module_hash: bytes | None = None,
    user_data: bytes | None = None,
) -> Verdict:
    """Check a quote against a trust anchor and optional expectations.

    Raw bytes are parsed first and raise :class:`MalformedQuote` if they
    are not a canonical quote.  The verdict names the first check that
    failed: signer, signature, runtime, module, user_data.
    """
    if not isinstance(quote, Quote):
        quote = Quote.from_bytes(quote)
    if quote.signer_id != anchor.key_id:
        return Verdict(False, "signer")
    try:
        anchor.public_key.verify(quote.signature, quote.signed_part())
    except InvalidSignature:
        return Verdict(False, "signature")
    m = quote.measurement
    if runtime_hash is not None and runtime_hash != m.runtime_hash:
        return Verdict(False, "runtime")
    if module_hash is not None and module_hash != m.module_hash:
        return Verdict(False, "module")
    if user_data is not None:
        base = module_hash if module_hash is not None else m.module_hash
        if report_data(base, user_data) != quote.report_data:
            return Verdict(False, "user_data")
    return PASS
