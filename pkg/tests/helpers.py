"""Shared fixtures-as-functions: fuzz corpora, sandbox trees, guest modules."""

from __future__ import annotations

import ipaddress
import os
import random
from pathlib import Path

import wasmtime

_ATOMS = [
    "..", ".", "", "a", "b", "sub", "inside_link", "escape_link", "root_link", "up_link", "chain",
    "%2e%2e", "..%2f", "%2f", "\\..\\", "..\\..", "~", "$HOME", "...", "....", ".. ", " ..", "a..b",
    "‥", "．．", "etc", "passwd", "x" * 40, "dir/", "//", "./..", "../sub",
]


def fuzz_path(rng: random.Random) -> str:
    parts = [rng.choice(_ATOMS) for _ in range(rng.randrange(1, 14))]
    if rng.random() < 0.2:
        parts = [".."] * rng.randrange(1, 30) + parts
    sep = "/" if rng.random() < 0.9 else rng.choice(["//", "/./", "\\"])
    path = sep.join(parts)
    if rng.random() < 0.05:
        path = "/" + path
    if rng.random() < 0.02:
        path += "\x00x"
    return path


def build_tree(base: Path) -> tuple[Path, Path]:
    """A preopen root with hostile and benign symlinks, plus a secret outside it."""
    outside = base / "outside"
    outside.mkdir()
    (outside / "secret").write_text("top secret")
    root = base / "root"
    (root / "sub" / "deeper").mkdir(parents=True)
    (root / "a").write_text("a")
    (root / "sub" / "b").write_text("b")
    os.symlink(outside, root / "escape_link")
    os.symlink("/", root / "root_link")
    os.symlink("..", root / "up_link")
    os.symlink("sub", root / "inside_link")
    os.symlink("escape_link/secret", root / "chain")
    os.symlink("../../outside", root / "sub" / "rel_escape")
    return root, outside


def contained(root: str, resolved: str) -> bool:
    """Independent containment check: strict string prefix on the real root."""
    root = os.path.realpath(root)
    return resolved.startswith(root + os.sep) and os.path.realpath(resolved) == resolved


def random_addresses(rng: random.Random, cidrs, n: int) -> list[str]:
    """Random v4/v6 addresses, biased towards the edges of each network."""
    nets = [ipaddress.ip_network(c) for c in cidrs]
    out = []
    for _ in range(n):
        r = rng.random()
        if r < 0.5 and nets:
            net = rng.choice(nets)
            edge = rng.choice([
                net.network_address, net.broadcast_address,
                net.network_address - 1 if int(net.network_address) > 0 else net.network_address,
                net.broadcast_address + 1 if int(net.broadcast_address) < (2 ** net.max_prefixlen - 1)
                else net.broadcast_address,
            ])
            out.append(str(edge))
        elif r < 0.8:
            out.append(str(ipaddress.IPv4Address(rng.getrandbits(32))))
        else:
            out.append(str(ipaddress.IPv6Address(rng.getrandbits(128))))
    return out


# guest modules

WASI = "wasi_snapshot_preview1"


def wat_module(body: str, imports: str = "", data: str = "", pages: int = 1) -> bytes:
    return wasmtime.wat2wasm(f"""
(module
  {imports}
  (memory (export "memory") {pages})
  {data}
  (func (export "_start") {body}))""")


IMPORT = {
    "path_open": f'(import "{WASI}" "path_open" (func $path_open (param i32 i32 i32 i32 i32 i64 i64 i32 i32) (result i32)))',
    "fd_write": f'(import "{WASI}" "fd_write" (func $fd_write (param i32 i32 i32 i32) (result i32)))',
    "fd_read": f'(import "{WASI}" "fd_read" (func $fd_read (param i32 i32 i32 i32) (result i32)))',
    "fd_close": f'(import "{WASI}" "fd_close" (func $fd_close (param i32) (result i32)))',
    "proc_exit": f'(import "{WASI}" "proc_exit" (func $proc_exit (param i32)))',
    "sock_connect": f'(import "{WASI}" "sock_connect" (func $sock_connect (param i32 i32 i32 i32) (result i32)))',
    "clock_time_get": f'(import "{WASI}" "clock_time_get" (func $clock_time_get (param i32 i64 i32) (result i32)))',
    "random_get": f'(import "{WASI}" "random_get" (func $random_get (param i32 i32) (result i32)))',
}


def imports(*names: str) -> str:
    return "\n  ".join(IMPORT[n] for n in names)


def _data_string(text: bytes) -> str:
    return "".join(f"\\{b:02x}" for b in text)


def writer_module(filename: str, payload: bytes, preopen_fd: int = 3) -> bytes:
    """Guest that creates ``filename`` under the first preopen and writes ``payload``.

    Exits with 100 + errno if the open fails, 200 + errno if the write fails.
    """
    name = filename.encode()
    return wat_module(
        f"""
    (local $e i32)
    (local.set $e (call $path_open (i32.const {preopen_fd}) (i32.const 0) (i32.const 1024) (i32.const {len(name)})
        (i32.const 9) (i64.const 64) (i64.const 0) (i32.const 0) (i32.const 16)))
    (if (local.get $e) (then (call $proc_exit (i32.add (i32.const 100) (local.get $e)))))
    (i32.store (i32.const 32) (i32.const 2048)) (i32.store (i32.const 36) (i32.const {len(payload)}))
    (local.set $e (call $fd_write (i32.load (i32.const 16)) (i32.const 32) (i32.const 1) (i32.const 48)))
    (if (local.get $e) (then (call $proc_exit (i32.add (i32.const 200) (local.get $e)))))
    (drop (call $fd_close (i32.load (i32.const 16))))
    (call $proc_exit (i32.const 0))""",
        imports("path_open", "fd_write", "fd_close", "proc_exit"),
        f'(data (i32.const 1024) "{_data_string(name)}") (data (i32.const 2048) "{_data_string(payload)}")',
        pages=max(1, (2048 + len(payload)) // 65536 + 1),
    )


def reader_module(filename: str, length: int, preopen_fd: int = 3) -> bytes:
    """Guest that reads ``filename`` and echoes up to ``length`` bytes to stdout."""
    name = filename.encode()
    return wat_module(
        f"""
    (local $e i32)
    (local.set $e (call $path_open (i32.const {preopen_fd}) (i32.const 0) (i32.const 1024) (i32.const {len(name)})
        (i32.const 0) (i64.const 2) (i64.const 0) (i32.const 0) (i32.const 16)))
    (if (local.get $e) (then (call $proc_exit (i32.add (i32.const 100) (local.get $e)))))
    (i32.store (i32.const 32) (i32.const 4096)) (i32.store (i32.const 36) (i32.const {length}))
    (local.set $e (call $fd_read (i32.load (i32.const 16)) (i32.const 32) (i32.const 1) (i32.const 48)))
    (if (local.get $e) (then (call $proc_exit (i32.add (i32.const 200) (local.get $e)))))
    (i32.store (i32.const 36) (i32.load (i32.const 48)))
    (drop (call $fd_write (i32.const 1) (i32.const 32) (i32.const 1) (i32.const 48)))
    (call $proc_exit (i32.const 0))""",
        imports("path_open", "fd_read", "fd_write", "proc_exit"),
        f'(data (i32.const 1024) "{_data_string(name)}")',
        pages=max(1, (4096 + length) // 65536 + 1),
    )


# attestation mutation campaign


def attestation_campaign(n_each: int, seed: int = 3) -> dict[str, tuple[int, int]]:
    """Mutate one byte of module, policy, user data or quote; return {target: (trials, false_passes)}.

    The verifier's expectations are recomputed from the mutated artifact, the
    way a relying party would.  Any rejection (parse error or FAIL verdict)
    counts as a detected mutation.
    """
    import json

    from wasmtee import BUILD_ID
    from wasmtee.attestation import (
        DeviceKey,
        Measurement,
        Quote,
        measure_module,
        quote_generate,
        quote_verify,
        runtime_hash,
    )
    from wasmtee.errors import MalformedQuote, PolicyError
    from wasmtee.sandbox import Policy

    rng = random.Random(seed)
    module = wat_module("(nop)", data='(data (i32.const 0) "' + "".join(f"\\{b:02x}" for b in range(256)) + '")')
    policy = Policy.from_dict({
        "preopens": {"data": "/srv/data"},
        "allowed_cidrs": ["10.0.0.0/8"],
        "enabled_calls": ["fd_read", "fd_write", "path_open", "fd_close", "proc_exit"],
        "memory_budget": 64 * 65536,
    })
    policy_doc = policy.canonical()
    user_data = bytes(rng.getrandbits(8) for _ in range(32))
    key = DeviceKey.from_seed(bytes(range(32)))
    anchor = key.anchor()
    rt = runtime_hash(BUILD_ID, policy.digest())
    quote = quote_generate(key, Measurement(rt, measure_module(module)), user_data, timestamp=1)
    wire = quote.to_bytes()
    assert quote_verify(wire, anchor, runtime_hash=rt, module_hash=measure_module(module), user_data=user_data)

    def mutate(data: bytes) -> bytes:
        out = bytearray(data)
        i = rng.randrange(len(out))
        out[i] ^= rng.randrange(1, 256)
        return bytes(out)

    def check(q=wire, mod=module, pol=policy_doc, ud=user_data) -> bool:
        try:
            expect_rt = runtime_hash(BUILD_ID, Policy.from_dict(json.loads(pol)).digest())
            return bool(quote_verify(Quote.from_bytes(q) if isinstance(q, bytes) else q, anchor,
                                     runtime_hash=expect_rt, module_hash=measure_module(mod), user_data=ud))
        except (MalformedQuote, PolicyError, ValueError):
            return False

    assert check()
    results = {}
    for target in ("module", "policy", "user_data", "quote"):
        passes = 0
        for _ in range(n_each):
            if target == "module":
                passes += check(mod=mutate(module))
            elif target == "policy":
                passes += check(pol=mutate(policy_doc))
            elif target == "user_data":
                passes += check(ud=mutate(user_data))
            else:
                passes += check(q=mutate(wire))
        results[target] = (n_each, passes)
    return results
