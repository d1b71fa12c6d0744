"""AEAD primitives and the simulated enclave key hierarchy.

Two orderings are offered.  ``ENCRYPT_THEN_MAC`` is AES-128-GCM: the tag
covers the ciphertext, so a caller that decrypts straight out of untrusted
memory races the host between tag check and decryption.  ``MAC_THEN_ENCRYPT``
is AES-128-CCM: the CBC-MAC covers the plaintext, which only ever exists in
trusted memory, so decrypting from an untrusted buffer is safe.

All nodes use 128-bit keys, 96-bit nonces and 128-bit tags.
"""

from __future__ import annotations

import enum
import hashlib
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives import hashes
from cryptography.hazmat.primitives.ciphers.aead import AESCCM, AESGCM
from cryptography.hazmat.primitives.kdf.hkdf import HKDF

from .errors import IntegrityError

KEY_SIZE = 16
NONCE_SIZE = 12
TAG_SIZE = 16
MAX_PLAINTEXT = 4096

ZERO_NONCE = bytes(NONCE_SIZE)

KDF_LABEL = b"wasmtee/pfs/root-key/v1"


class AeadVariant(enum.IntEnum):
    ENCRYPT_THEN_MAC = 1
    MAC_THEN_ENCRYPT = 2

    @property
    def short(self) -> str:
        return "etm" if self is AeadVariant.ENCRYPT_THEN_MAC else "mte"

    @classmethod
    def parse(cls, text: str) -> AeadVariant:
        text = text.strip().lower()
        for v in cls:
            if text in (v.short, v.name.lower()):
                return v
        raise ValueError(f"unknown AEAD variant {text!r}")


class OwnerBinding(enum.IntEnum):
    ENCLAVE_BOUND = 1
    OWNER_BOUND = 2


def _cipher(variant: AeadVariant, key: bytes):
    if len(key) != KEY_SIZE:
        raise ValueError(f"key must be {KEY_SIZE} bytes")
    if variant is AeadVariant.ENCRYPT_THEN_MAC:
        return AESGCM(key)
    return AESCCM(key, tag_length=TAG_SIZE)


def _check_sizes(nonce: bytes, length: int) -> None:
    if len(nonce) != NONCE_SIZE:
        raise ValueError(f"nonce must be {NONCE_SIZE} bytes")
    if length > MAX_PLAINTEXT:
        raise ValueError(f"payload larger than {MAX_PLAINTEXT} bytes")


def seal(variant: AeadVariant, key: bytes, nonce: bytes, aad: bytes, plain) -> tuple[bytes, bytes]:
    """Encrypt ``plain`` and return ``(cipher, tag)``; ``len(cipher) == len(plain)``."""
    _check_sizes(nonce, len(plain))
    out = _cipher(variant, key).encrypt(nonce, plain, aad or None)
    return out[:-TAG_SIZE], out[-TAG_SIZE:]


def unseal(variant: AeadVariant, key: bytes, nonce: bytes, aad: bytes, cipher, tag: bytes) -> bytes:
    """Inverse of :func:`seal`.  Raises :class:`IntegrityError` on any mismatch."""
    _check_sizes(nonce, len(cipher))
    if len(tag) != TAG_SIZE:
        raise IntegrityError("tag has wrong length")
    return unseal_joined(variant, key, nonce, aad, b"".join((cipher, tag)))


def unseal_joined(variant: AeadVariant, key: bytes, nonce: bytes, aad: bytes, cipher_and_tag) -> bytes:
    """Like :func:`unseal` for a buffer that already holds ``cipher || tag``.

    Accepts any buffer (memoryview slices included), which is what lets the
    file system decrypt without staging the ciphertext first.
    """
    try:
        return _cipher(variant, key).decrypt(nonce, cipher_and_tag, aad or None)
    except InvalidTag:
        raise IntegrityError(f"{variant.short} authentication failed") from None


@dataclass(frozen=True)
class SealingContext:
    """Stand-in for the processor secrets plus enclave identity.

    ``master_secret`` plays the fused device key, ``measurement`` the enclave
    identity (runtime build plus policy).  Keys derived under one context
    cannot be re-derived under another.
    """

    master_secret: bytes
    measurement: bytes
    owner_binding: OwnerBinding = OwnerBinding.ENCLAVE_BOUND

    def __post_init__(self):
        if len(self.master_secret) != 32:
            raise ValueError("master_secret must be 32 bytes")
        if len(self.measurement) != 32:
            raise ValueError("measurement must be 32 bytes")


def derive_root_key(ctx: SealingContext, file_id: str) -> bytes:
    """HKDF-SHA256 with ``master_secret`` as input key material.

    salt = measurement; info = label || u8 binding || u32le len(id) || id.
    """
    fid = file_id.encode("utf-8")
    info = KDF_LABEL + struct.pack("<BI", ctx.owner_binding, len(fid)) + fid
    hkdf = HKDF(algorithm=hashes.SHA256(), length=KEY_SIZE, salt=ctx.measurement, info=info)
    return hkdf.derive(ctx.master_secret)


def path_digest(file_id: str) -> bytes:
    return hashlib.sha256(file_id.encode("utf-8")).digest()


# Test-vector file: one record per line, whitespace-separated hex fields
#   variant key nonce aad plain cipher tag
# with "-" standing for an empty field and "#" starting a comment.

VECTOR_FIELDS = ("variant", "key", "nonce", "aad", "plain", "cipher", "tag")


def _hex(b: bytes) -> str:
    return b.hex() if b else "-"


def _unhex(s: str) -> bytes:
    return b"" if s == "-" else bytes.fromhex(s)


def format_vector(variant: AeadVariant, key, nonce, aad, plain, cipher, tag) -> str:
    return " ".join([variant.short] + [_hex(x) for x in (key, nonce, aad, plain, cipher, tag)])


def read_vectors(path: str | Path) -> Iterator[dict]:
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != len(VECTOR_FIELDS):
            raise ValueError(f"{path}:{lineno}: expected {len(VECTOR_FIELDS)} fields")
        rec = dict(zip(VECTOR_FIELDS, parts))
        out = {k: _unhex(v) for k, v in rec.items() if k != "variant"}
        out["variant"] = AeadVariant.parse(rec["variant"])
        yield out
