"""Command line host: ``wasmtee run|quote|verify|bench|keygen|cat``.

Exit codes for ``run``: 0 guest success, 1 guest trap or nonzero guest
exit, 2 policy error, 3 integrity error.  ``verify`` exits 0 on PASS and 1
on FAIL.  Usage and input errors exit 2.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from . import BUILD_ID
from .attestation import (
    DeviceKey,
    Measurement,
    Quote,
    TrustAnchor,
    measure_module,
    quote_generate,
    quote_verify,
    runtime_hash,
)
from .bench import Pattern, WorkloadSpec, run_workload
from .boundary import LATENCY_PRESETS
from .crypto import AeadVariant, OwnerBinding
from .errors import (
    GuestTrap,
    IntegrityError,
    KeyUnavailable,
    MalformedQuote,
    MissingImport,
    PolicyError,
    ValidationError,
    WasmTeeError,
)
from .host import HostConfig, load_module, run
from .pfs import BASELINE, OPTIMIZED, FsVariant, OpenMode, open_protected
from .sandbox import Policy, file_id_for, path_resolve

EXIT_OK = 0
EXIT_TRAP = 1
EXIT_POLICY = 2
EXIT_INTEGRITY = 3

SECRET_ENV = "WASMTEE_MASTER_SECRET"


def _master_secret(path: str | None) -> bytes:
    """32-byte platform secret: a file (raw or hex), the environment, or zeros."""
    if path:
        raw = Path(path).read_bytes()
        secret = raw if len(raw) == 32 else bytes.fromhex(raw.decode().strip())
    elif os.environ.get(SECRET_ENV):
        secret = bytes.fromhex(os.environ[SECRET_ENV])
    else:
        secret = bytes(32)
    if len(secret) != 32:
        raise ValueError("master secret must be 32 bytes")
    return secret


def _fs_variant(args) -> FsVariant:
    return FsVariant.parse(args.fs_variant, args.aead)


def _config(args, policy: Policy) -> HostConfig:
    return HostConfig(
        policy=policy,
        fs_variant=_fs_variant(args),
        cache_capacity=args.cache,
        memory_budget=args.mem,
        latency_preset=args.latency,
        master_secret=_master_secret(args.master_secret),
        owner_binding=OwnerBinding[args.binding.upper().replace("-", "_") + "_BOUND"],
        cache_fstat=args.cache_fstat,
    )


def _user_data(args) -> bytes:
    if getattr(args, "user_data_file", None):
        return Path(args.user_data_file).read_bytes()
    return bytes.fromhex(args.user_data) if args.user_data else b""


def cmd_run(args) -> int:
    try:
        policy = Policy.load(args.policy)
    except PolicyError as e:
        print(f"policy error: {e}", file=sys.stderr)
        return EXIT_POLICY
    config = _config(args, policy)
    try:
        inst = load_module(args.module, config)
    except (ValidationError, MissingImport) as e:
        print(f"cannot load module: {e}", file=sys.stderr)
        return EXIT_TRAP
    try:
        code = run(inst, [Path(args.module).name, *args.guest_args], dict(kv.split("=", 1) for kv in args.env))
    except IntegrityError as e:
        print(f"integrity error: {e}", file=sys.stderr)
        return EXIT_INTEGRITY
    except GuestTrap as e:
        print(f"guest trap ({type(e).__name__}): {e}", file=sys.stderr)
        return EXIT_TRAP
    finally:
        if args.counters:
            Path(args.counters).write_text(inst.boundary.snapshot().to_kv())
    return EXIT_OK if code == 0 else EXIT_TRAP


def _measurement(args) -> Measurement:
    policy = Policy.load(args.policy)
    inst = load_module(args.module, HostConfig(policy=policy))
    return inst.measurement


def cmd_quote(args) -> int:
    try:
        key = DeviceKey.load(args.key)
        m = _measurement(args)
        q = quote_generate(key, m, _user_data(args), timestamp=args.timestamp)
    except (KeyUnavailable, PolicyError, ValidationError, MissingImport, ValueError) as e:
        print(f"quote: {e}", file=sys.stderr)
        return EXIT_POLICY
    if args.out:
        Path(args.out).write_bytes(q.to_bytes())
    print(q.to_hex())
    return EXIT_OK


def _read_quote(path: str) -> Quote:
    data = Path(path).read_bytes()
    if data.startswith(b"TWQUOTE1"):
        return Quote.from_bytes(data)
    return Quote.from_hex(data.decode("ascii", errors="replace"))


def cmd_verify(args) -> int:
    try:
        quote = _read_quote(args.quote)
        anchor = TrustAnchor.load(args.anchor)
        expect_rt = bytes.fromhex(args.runtime_hash) if args.runtime_hash else None
        expect_mod = bytes.fromhex(args.module_hash) if args.module_hash else None
        if args.policy:
            expect_rt = runtime_hash(BUILD_ID, Policy.load(args.policy).digest())
        if args.module:
            expect_mod = measure_module(Path(args.module).read_bytes())
        ud = _user_data(args) if (args.user_data or args.user_data_file) else None
    except (MalformedQuote, PolicyError, OSError, ValueError) as e:
        print(f"verify: {e}", file=sys.stderr)
        return EXIT_POLICY
    verdict = quote_verify(quote, anchor, runtime_hash=expect_rt, module_hash=expect_mod, user_data=ud)
    print(verdict)
    return EXIT_OK if verdict else EXIT_TRAP


def cmd_keygen(args) -> int:
    key = DeviceKey.generate()
    Path(args.out).write_bytes(key.to_pem())
    os.chmod(args.out, 0o600)
    Path(args.anchor).write_bytes(key.anchor().to_pem())
    print(key.anchor().key_id.hex())
    return EXIT_OK


def cmd_cat(args) -> int:
    """Decrypt a protected file the way a guest under ``--policy`` would see it."""
    try:
        policy = Policy.load(args.policy)
        config = _config(args, policy)
        preopen, _, rel = args.path.partition("/")
        host_path = path_resolve(policy, preopen, rel, must_exist=True)
        file_id = file_id_for(policy, preopen, host_path)
        with open_protected(host_path, OpenMode.READ, ctx=config.sealing_context(), file_id=file_id,
                            variant=config.fs_variant) as f:
            data = f.read()
    except IntegrityError as e:
        print(f"integrity error: {e}", file=sys.stderr)
        return EXIT_INTEGRITY
    except (PolicyError, WasmTeeError, OSError) as e:
        print(f"cat: {e}", file=sys.stderr)
        return EXIT_POLICY
    sys.stdout.buffer.write(data)
    return EXIT_OK


def _counts(text: str) -> tuple[int, ...]:
    if ":" in text:
        start, stop, *step = (int(x) for x in text.split(":"))
        return tuple(range(start, stop + 1, step[0] if step else 1000))
    return tuple(int(x) for x in text.split(","))


def cmd_bench(args) -> int:
    variants = {"both": (BASELINE, OPTIMIZED), "baseline": (BASELINE,), "optimized": (OPTIMIZED,)}[args.variant]
    patterns = list(Pattern) if args.pattern == "all" else [Pattern.parse(args.pattern)]
    reports = []
    for pattern in patterns:
        spec = WorkloadSpec(
            pattern=pattern,
            record_counts=_counts(args.records),
            record_size=args.record_size,
            seed=args.seed,
            variants=variants,
            reps=args.reps,
            warmup=args.warmup,
            queries=args.queries,
            cache_capacity=args.cache,
            latency=args.latency,
        )
        report = run_workload(spec)
        reports.append(report)
        print(report.table())
    if args.out:
        docs = [r.to_dict() for r in reports]
        Path(args.out).write_text(json.dumps(docs[0] if len(docs) == 1 else docs, indent=2, sort_keys=True))
    if args.csv:
        Path(args.csv).write_text("".join(r.to_csv() if i == 0 else r.to_csv().split("\n", 1)[1]
                                          for i, r in enumerate(reports)))
    return EXIT_OK


def _host_options(p: argparse.ArgumentParser) -> None:
    p.add_argument("--fs-variant", choices=["baseline", "optimized"], default="optimized")
    p.add_argument("--aead", choices=[v.short for v in AeadVariant], default=None,
                   help="override the variant's cipher mode")
    p.add_argument("--cache", type=int, default=48, help="node cache capacity")
    p.add_argument("--mem", type=int, default=None, help="guest memory budget in bytes")
    p.add_argument("--latency", choices=sorted(LATENCY_PRESETS), default="sgx-median")
    p.add_argument("--master-secret", metavar="FILE", help=f"32-byte secret (default: ${SECRET_ENV} or zeros)")
    p.add_argument("--binding", choices=["enclave", "owner"], default="enclave")
    p.add_argument("--cache-fstat", action="store_true", help="serve file sizes from root metadata")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="wasmtee", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run a module's _start under a policy")
    p.add_argument("--module", required=True)
    p.add_argument("--policy", required=True)
    _host_options(p)
    p.add_argument("--env", action="append", default=[], metavar="K=V")
    p.add_argument("--counters", metavar="FILE", help="write boundary counters as key=value lines")
    p.add_argument("guest_args", nargs="*")
    p.set_defaults(fn=cmd_run)

    p = sub.add_parser("quote", help="measure a module and emit a signed quote")
    p.add_argument("--module", required=True)
    p.add_argument("--policy", required=True)
    p.add_argument("--key", required=True, help="device key (PEM)")
    p.add_argument("--user-data", help="hex, at most 64 bytes")
    p.add_argument("--user-data-file")
    p.add_argument("--timestamp", type=int, default=None, help="fixed timestamp (ns) for reproducible quotes")
    p.add_argument("--out", help="also write the binary quote here")
    p.set_defaults(fn=cmd_quote)

    p = sub.add_parser("verify", help="verify a quote against a trust anchor")
    p.add_argument("--quote", required=True, help="binary or hex quote file")
    p.add_argument("--anchor", required=True, help="trust anchor (PEM)")
    p.add_argument("--module", help="expected module file")
    p.add_argument("--policy", help="expected policy file")
    p.add_argument("--module-hash")
    p.add_argument("--runtime-hash")
    p.add_argument("--user-data")
    p.add_argument("--user-data-file")
    p.set_defaults(fn=cmd_verify)

    p = sub.add_parser("keygen", help="create a device key and its trust anchor")
    p.add_argument("--out", required=True)
    p.add_argument("--anchor", required=True)
    p.set_defaults(fn=cmd_keygen)

    p = sub.add_parser("cat", help="decrypt a protected file, addressed as PREOPEN/PATH")
    p.add_argument("--policy", required=True)
    p.add_argument("path")
    _host_options(p)
    p.set_defaults(fn=cmd_cat)

    p = sub.add_parser("bench", help="record-store micro-benchmarks")
    p.add_argument("--pattern", default="randread", help="insert, seqread, randread or all")
    p.add_argument("--records", default="1000:175000:1000", help="comma list or START:STOP[:STEP]")
    p.add_argument("--record-size", type=int, default=1024)
    p.add_argument("--variant", choices=["both", "baseline", "optimized"], default="both")
    p.add_argument("--reps", type=int, default=5)
    p.add_argument("--warmup", type=int, default=1, help="untimed passes per variant")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--queries", type=int, default=None, help="random reads per repetition")
    p.add_argument("--cache", type=int, default=48)
    p.add_argument("--latency", choices=sorted(LATENCY_PRESETS), default="sgx-median")
    p.add_argument("--out", help="JSON report path")
    p.add_argument("--csv", help="CSV report path")
    p.set_defaults(fn=cmd_bench)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
