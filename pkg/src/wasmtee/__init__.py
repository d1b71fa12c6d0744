"""Hardware-free trusted WebAssembly runtime plumbing.

Subpackages and modules:

* :mod:`wasmtee.crypto` -- AEAD modes and root-key derivation
* :mod:`wasmtee.pfs` -- the Merkle-tree protected file store
* :mod:`wasmtee.boundary` -- simulated enclave boundary and counters
* :mod:`wasmtee.sandbox` -- capability policy and the WASI call layer
* :mod:`wasmtee.attestation` -- measurements, quotes, verification
* :mod:`wasmtee.host` -- wasmtime embedding
* :mod:`wasmtee.bench` -- record-store micro-benchmarks
"""

__version__ = "0.1.0"
BUILD_ID = f"wasmtee/{__version__}"
