"""
Attestation: quoting a measured guest
=====================================

The runtime measures the module bytes and the policy, folds in caller data
(here a fresh public key) and signs the lot with the device key.  A
relying party checks the quote against what it expects to be running.
"""

from __future__ import annotations

import os

import wasmtime

from wasmtee import BUILD_ID
from wasmtee.attestation import DeviceKey, Quote, quote_generate, quote_verify, runtime_hash
from wasmtee.host import HostConfig, load_module
from wasmtee.sandbox import Policy

module = wasmtime.wat2wasm('(module (memory (export "memory") 1) (func (export "_start")))')
policy = Policy.from_dict({"enabled_calls": ["proc_exit"]})
device = DeviceKey.generate()
channel_key = os.urandom(32)

inst = load_module(module, HostConfig(policy=policy))
quote = quote_generate(device, inst.measurement, user_data=channel_key)
wire = quote.to_bytes()
print(f"quote: {len(wire)} bytes, signer {quote.signer_id.hex()[:16]}...")

# %%
# The verifier recomputes its expectations from artifacts it trusts.
expected_runtime = runtime_hash(BUILD_ID, policy.digest())
print("genuine      :", quote_verify(wire, device.anchor(), runtime_hash=expected_runtime,
                                     module_hash=inst.module_hash, user_data=channel_key))

# %%
# Any change is caught, and the verdict says where.
other_policy = Policy.from_dict({"enabled_calls": ["proc_exit", "sock_connect"]})
print("other policy :", quote_verify(wire, device.anchor(), runtime_hash=runtime_hash(BUILD_ID, other_policy.digest())))
print("other key    :", quote_verify(wire, device.anchor(), user_data=os.urandom(32)))
print("other device :", quote_verify(wire, DeviceKey.generate().anchor()))
forged = Quote(quote.measurement, quote.report_data, quote.timestamp + 1, quote.signer_id, quote.signature)
print("edited quote :", quote_verify(forged, device.anchor()))
