"""
Sandbox policy: preopens, network ranges and the clock
======================================================

A policy is a small JSON document.  Everything the guest can touch on the
host is derived from it, and its canonical hash becomes part of the
runtime measurement.
"""

from __future__ import annotations

import os
import tempfile
from pathlib import Path

from wasmtee.errors import PolicyDenied
from wasmtee.sandbox import MonotonicClock, Policy, address_allowed, path_resolve

root = Path(tempfile.mkdtemp())
(root / "data" / "db").mkdir(parents=True)
(root / "secret.txt").write_text("host only")
os.symlink(root, root / "data" / "back_door")

policy = Policy.from_dict({
    "preopens": {"data": str(root / "data")},
    "allowed_cidrs": ["10.0.0.0/8", "2001:db8::/32"],
    "enabled_calls": ["fd_read", "fd_write", "path_open", "fd_close", "proc_exit", "sock_connect"],
})
print("policy digest:", policy.digest().hex())

# %%
# Paths are resolved on the host, symlinks included, and must stay inside
# the preopen.
for guest_path in ["db/users.tbl", "../secret.txt", "back_door/secret.txt", "db/../db/./x", "/etc/passwd"]:
    try:
        print(f"{guest_path!r:>26} -> {path_resolve(policy, 'data', guest_path)}")
    except PolicyDenied as e:
        print(f"{guest_path!r:>26} -> denied ({e})")

# %%
# Outbound connections are checked against the CIDR allow-list before
# anything leaves the sandbox.
for addr in ["10.0.0.0", "10.255.255.255", "11.0.0.0", "192.168.1.1", "2001:db8::1", "::ffff:10.0.0.1"]:
    print(f"{addr:>16}: {'allowed' if address_allowed(policy, addr) else 'denied'}")

# %%
# The host clock is untrusted.  The sandbox never lets guest time go
# backwards or stand still.
readings = iter([1_000, 2_000, 1_500, 1_500, 5_000, 10])
clock = MonotonicClock(lambda: next(readings))
print("host said   :", [1_000, 2_000, 1_500, 1_500, 5_000, 10])
print("guest sees  :", [clock.now() for _ in range(6)])
