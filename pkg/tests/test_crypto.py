from __future__ import annotations

import os

import pytest
from conftest import VECTORS
from hypothesis import given, settings
from hypothesis import strategies as st
from oracles import aead_seal, root_key

from wasmtee.crypto import (
    AeadVariant,
    OwnerBinding,
    SealingContext,
    derive_root_key,
    format_vector,
    read_vectors,
    seal,
    unseal,
    unseal_joined,
)
from wasmtee.errors import IntegrityError

VARIANTS = list(AeadVariant)
K, N = bytes(range(16)), bytes(range(12))


def _flip(b: bytes, bit: int) -> bytes:
    out = bytearray(b)
    out[bit // 8] ^= 1 << (bit % 8)
    return bytes(out)


@pytest.mark.parametrize("variant", VARIANTS)
def test_empty_message_roundtrip(variant):
    cipher, tag = seal(variant, K, N, b"", b"")
    assert cipher == b"" and len(tag) == 16
    assert unseal(variant, K, N, b"", cipher, tag) == b""


@pytest.mark.parametrize("variant", VARIANTS)
def test_full_node_roundtrip(variant):
    plain = os.urandom(4096)
    cipher, tag = seal(variant, K, N, b"aad", plain)
    assert len(cipher) == 4096
    assert unseal(variant, K, N, b"aad", cipher, tag) == plain
    assert unseal_joined(variant, K, N, b"aad", memoryview(cipher + tag)) == plain


def test_modes_give_different_tags_and_both_roundtrip():
    plain = b"same inputs for both modes"
    etm = seal(AeadVariant.ENCRYPT_THEN_MAC, K, N, b"hdr", plain)
    mte = seal(AeadVariant.MAC_THEN_ENCRYPT, K, N, b"hdr", plain)
    assert etm[1] != mte[1]
    assert unseal(AeadVariant.ENCRYPT_THEN_MAC, K, N, b"hdr", *etm) == plain
    assert unseal(AeadVariant.MAC_THEN_ENCRYPT, K, N, b"hdr", *mte) == plain


@pytest.mark.parametrize("variant", VARIANTS)
def test_size_limits(variant):
    with pytest.raises(ValueError):
        seal(variant, K, N, b"", bytes(4097))
    with pytest.raises(ValueError):
        seal(variant, K, bytes(8), b"", b"x")
    with pytest.raises(ValueError):
        seal(variant, bytes(32), N, b"", b"x")


@pytest.mark.parametrize("variant", VARIANTS)
def test_every_single_bit_flip_rejected_small(variant):
    """Exhaustive over cipher, tag and aad bits for a 64-byte payload."""
    plain, aad = os.urandom(64), os.urandom(24)
    cipher, tag = seal(variant, K, N, aad, plain)
    for bit in range(len(cipher) * 8):
        with pytest.raises(IntegrityError):
            unseal(variant, K, N, aad, _flip(cipher, bit), tag)
    for bit in range(128):
        with pytest.raises(IntegrityError):
            unseal(variant, K, N, aad, cipher, _flip(tag, bit))
    for bit in range(len(aad) * 8):
        with pytest.raises(IntegrityError):
            unseal(variant, K, N, _flip(aad, bit), cipher, tag)


@settings(max_examples=150, deadline=None)
@given(
    variant=st.sampled_from(VARIANTS),
    plain=st.binary(min_size=65, max_size=4096),
    aad=st.binary(max_size=64),
    data=st.data(),
)
def test_random_bit_flip_rejected_large(variant, plain, aad, data):
    cipher, tag = seal(variant, K, N, aad, plain)
    where = data.draw(st.sampled_from(["cipher", "tag"] + (["aad"] if aad else [])))
    target = {"cipher": cipher, "tag": tag, "aad": aad}[where]
    bit = data.draw(st.integers(0, len(target) * 8 - 1))
    args = {"cipher": cipher, "tag": tag, "aad": aad, where: _flip(target, bit)}
    with pytest.raises(IntegrityError):
        unseal(variant, K, N, args["aad"], args["cipher"], args["tag"])


@settings(max_examples=200, deadline=None)
@given(variant=st.sampled_from(VARIANTS), plain=st.binary(max_size=4096), aad=st.binary(max_size=128))
def test_roundtrip_property(variant, plain, aad):
    assert unseal(variant, K, N, aad, *seal(variant, K, N, aad, plain)) == plain


@settings(max_examples=40, deadline=None)
@given(variant=st.sampled_from(VARIANTS), plain=st.binary(max_size=300), aad=st.binary(max_size=40),
       key=st.binary(min_size=16, max_size=16), nonce=st.binary(min_size=12, max_size=12))
def test_matches_reference_construction(variant, plain, aad, key, nonce):
    assert seal(variant, key, nonce, aad, plain) == aead_seal(variant.short, key, nonce, aad, plain)


def test_committed_aead_vectors():
    recs = list(read_vectors(VECTORS / "aead.txt"))
    assert len(recs) >= 60
    assert {r["variant"] for r in recs} == set(VARIANTS)
    for r in recs:
        expected = (r["cipher"], r["tag"])
        assert seal(r["variant"], r["key"], r["nonce"], r["aad"], r["plain"]) == expected
        assert aead_seal(r["variant"].short, r["key"], r["nonce"], r["aad"], r["plain"]) == expected
        assert unseal(r["variant"], r["key"], r["nonce"], r["aad"], *expected) == r["plain"]


def test_vector_format_roundtrip(tmp_path):
    line = format_vector(AeadVariant.MAC_THEN_ENCRYPT, K, N, b"", b"ab", b"cd", bytes(16))
    p = tmp_path / "v.txt"
    p.write_text("# comment\n\n" + line + "  # trailing\n")
    (rec,) = read_vectors(p)
    assert rec["aad"] == b"" and rec["plain"] == b"ab" and rec["variant"] is AeadVariant.MAC_THEN_ENCRYPT
    p.write_text("etm 00\n")
    with pytest.raises(ValueError):
        list(read_vectors(p))


# key derivation


def test_kdf_deterministic(ctx):
    assert derive_root_key(ctx, "data/a") == derive_root_key(ctx, "data/a")
    assert len(derive_root_key(ctx, "data/a")) == 16


def test_kdf_path_sensitivity(ctx):
    a, b = derive_root_key(ctx, "a/b"), derive_root_key(ctx, "a/c")
    assert a != b
    assert a == root_key(ctx.master_secret, ctx.measurement, 1, "a/b")
    assert b == root_key(ctx.master_secret, ctx.measurement, 1, "a/c")


def test_kdf_measurement_sensitivity(ctx):
    m2 = SealingContext(ctx.master_secret, bytes(32))
    assert derive_root_key(ctx, "a") != derive_root_key(m2, "a")
    assert derive_root_key(m2, "a") == root_key(ctx.master_secret, bytes(32), 1, "a")


def test_kdf_every_field_matters(ctx):
    base = derive_root_key(ctx, "f")
    variants = [
        SealingContext(bytes(32), ctx.measurement, ctx.owner_binding),
        SealingContext(ctx.master_secret, bytes(32), ctx.owner_binding),
        SealingContext(ctx.master_secret, ctx.measurement, OwnerBinding.OWNER_BOUND),
    ]
    keys = {base} | {derive_root_key(c, "f") for c in variants} | {derive_root_key(ctx, "g")}
    assert len(keys) == 5


@settings(max_examples=100, deadline=None)
@given(st.lists(st.text(min_size=1, max_size=30), min_size=2, max_size=30, unique=True))
def test_kdf_no_collisions(ids):
    ctx = SealingContext(bytes(range(32)), bytes(32))
    keys = {derive_root_key(ctx, i) for i in ids}
    assert len(keys) == len(ids)


def test_kdf_prefix_is_not_a_match(ctx):
    assert derive_root_key(ctx, "ab") != derive_root_key(ctx, "a")


def test_committed_kdf_vectors():
    lines = [l for l in (VECTORS / "kdf.txt").read_text().splitlines() if l and not l.startswith("#")]
    assert len(lines) >= 10
    for line in lines:
        master, meas, binding, fid, key = line.split()
        fid = bytes.fromhex(fid).decode()
        ctx = SealingContext(bytes.fromhex(master), bytes.fromhex(meas), OwnerBinding(int(binding)))
        assert derive_root_key(ctx, fid).hex() == key
        assert root_key(bytes.fromhex(master), bytes.fromhex(meas), int(binding), fid).hex() == key


def test_context_validation():
    with pytest.raises(ValueError):
        SealingContext(bytes(31), bytes(32))
    with pytest.raises(ValueError):
        SealingContext(bytes(32), bytes(33))


def test_variant_parse():
    assert AeadVariant.parse("etm") is AeadVariant.ENCRYPT_THEN_MAC
    assert AeadVariant.parse("MtE") is AeadVariant.MAC_THEN_ENCRYPT
    with pytest.raises(ValueError):
        AeadVariant.parse("ecb")
