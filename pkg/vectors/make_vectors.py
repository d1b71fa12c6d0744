"""Regenerate the committed interoperability vectors in this directory.

    python3 vectors/make_vectors.py

Inputs come from a fixed-seed generator, so rerunning produces identical
files.  The test suite checks every line against independent references.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from wasmtee.attestation import ArtifactForm, DeviceKey, Measurement, quote_generate, runtime_hash
from wasmtee.crypto import AeadVariant, OwnerBinding, SealingContext, derive_root_key, format_vector, seal

HERE = Path(__file__).parent
SIZES = (0, 1, 15, 16, 17, 31, 64, 255, 1024, 4032, 4096)
AAD_SIZES = (0, 9, 48)


def aead_lines(rng: np.random.Generator) -> list[str]:
    lines = ["# variant key nonce aad plain cipher tag  (hex, '-' = empty)"]
    for variant in AeadVariant:
        for n in SIZES:
            for a in AAD_SIZES:
                key, nonce, aad, plain = rng.bytes(16), rng.bytes(12), rng.bytes(a), rng.bytes(n)
                if n == 64 and a == 9:
                    nonce = bytes(12)  # the zero nonce used for tree nodes
                cipher, tag = seal(variant, key, nonce, aad, plain)
                lines.append(format_vector(variant, key, nonce, aad, plain, cipher, tag))
    return lines


def kdf_lines(rng: np.random.Generator) -> list[str]:
    lines = ["# master_secret measurement owner_binding file_id(utf-8 hex) root_key"]
    ids = ["data/a/b", "data/a/c", "data/out.txt", "x", "preopen/été.bin"]
    master, measurement = rng.bytes(32), rng.bytes(32)
    for binding in OwnerBinding:
        for fid in ids:
            ctx = SealingContext(master, measurement, binding)
            lines.append(f"{master.hex()} {measurement.hex()} {int(binding)} {fid.encode().hex()} "
                         f"{derive_root_key(ctx, fid).hex()}")
    other = rng.bytes(32)
    ctx = SealingContext(master, other)
    lines.append(f"{master.hex()} {other.hex()} 1 {ids[0].encode().hex()} {derive_root_key(ctx, ids[0]).hex()}")
    return lines


def quote_lines(rng: np.random.Generator) -> list[str]:
    seed = rng.bytes(32)
    key = DeviceKey.from_seed(seed)
    rt = runtime_hash("wasmtee/0.1.0", rng.bytes(32))
    mod = rng.bytes(32)
    lines = ["# device_seed user_data timestamp artifact_form runtime_hash module_hash quote"]
    for ud, form in ((b"", ArtifactForm.BYTECODE), (rng.bytes(32), ArtifactForm.BYTECODE), (rng.bytes(64), ArtifactForm.AOT)):
        ts = 1_700_000_000_000_000_000
        q = quote_generate(key, Measurement(rt, mod, form), ud, timestamp=ts)
        lines.append(f"{seed.hex()} {ud.hex() or '-'} {ts} {int(form)} {rt.hex()} {mod.hex()} {q.to_hex()}")
    return lines


def main() -> None:
    rng = np.random.default_rng(20240917)
    for name, fn in (("aead.txt", aead_lines), ("kdf.txt", kdf_lines), ("quote.txt", quote_lines)):
        (HERE / name).write_text("\n".join(fn(rng)) + "\n")
        print(f"wrote {HERE / name}")


if __name__ == "__main__":
    main()
