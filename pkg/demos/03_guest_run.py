"""
Running a guest: one entry, every call gated
============================================

A tiny WebAssembly module writes a record into its preopen.  The host
runs it once, encrypts the file transparently and counts every crossing
of the simulated enclave boundary.
"""

from __future__ import annotations

import tempfile
from pathlib import Path

import wasmtime

from wasmtee.host import HostConfig, bound_surface, load_module, run
from wasmtee.pfs import OpenMode, open_protected
from wasmtee.sandbox import Policy, file_id_for

WASI = "wasi_snapshot_preview1"
RECORD = b"account=42;balance=1000000;note=top secret"

wat = f"""
(module
  (import "{WASI}" "path_open" (func $open (param i32 i32 i32 i32 i32 i64 i64 i32 i32) (result i32)))
  (import "{WASI}" "fd_write" (func $write (param i32 i32 i32 i32) (result i32)))
  (import "{WASI}" "fd_close" (func $close (param i32) (result i32)))
  (memory (export "memory") 1)
  (data (i32.const 64) "ledger.bin")
  (data (i32.const 128) "{RECORD.decode()}")
  (func (export "_start")
    ;; open data/ledger.bin for writing (create, truncate)
    (drop (call $open (i32.const 3) (i32.const 0) (i32.const 64) (i32.const 10)
                      (i32.const 9) (i64.const 64) (i64.const 0) (i32.const 0) (i32.const 16)))
    (i32.store (i32.const 32) (i32.const 128))
    (i32.store (i32.const 36) (i32.const {len(RECORD)}))
    (drop (call $write (i32.load (i32.const 16)) (i32.const 32) (i32.const 1) (i32.const 48)))
    (drop (call $close (i32.load (i32.const 16))))))
"""

workdir = Path(tempfile.mkdtemp())
(workdir / "data").mkdir()
policy = Policy.from_dict({"preopens": {"data": str(workdir / "data")}})
config = HostConfig(policy=policy)

inst = load_module(wasmtime.wat2wasm(wat), config)
print("module hash :", inst.measurement.module_hash.hex())
print("runtime hash:", inst.measurement.runtime_hash.hex())
print("host calls linked:", len(bound_surface(inst)))
print("exit code:", run(inst))

# %%
# What the host sees, and what the boundary counted.
host_file = workdir / "data" / "ledger.bin"
print("record visible on disk?", RECORD in host_file.read_bytes())
print(inst.boundary.snapshot().to_kv())

# %%
# The record comes back intact for the same runtime and policy.
with open_protected(host_file, OpenMode.READ, ctx=config.sealing_context(),
                    file_id=file_id_for(policy, 0, str(host_file))) as f:
    print(f.read())
