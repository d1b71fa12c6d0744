"""Record-store micro-benchmarks over the protected file system.

The store is a single protected file holding fixed-size records; record
*i* lives at byte offset ``i * record_size``.  Three access patterns are
measured: sequential insert, sequential read in insertion order, and
random point reads.  Each variant runs the identical operation sequence
(same seed, same payloads, same read order) and the harness reports
median wall time, boundary counters and a per-category time breakdown.

Breakdown categories, all in seconds before normalisation:

``clearing``     bytes cleared x ``clear_cycles_per_byte`` / clock
``transitions``  ocalls x ``crossing_cycles`` / clock
``reading``      bytes marshalled across the boundary x ``copy_cycles_per_byte`` / clock
``overhead``     measured wall time of the in-process work
"""

from __future__ import annotations

import csv
import enum
import hashlib
import io
import json
import math
import os
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np

from .boundary import LATENCY_PRESETS, Boundary, BoundaryCounters, LatencyModel
from .crypto import SealingContext
from .pfs import BASELINE, DEFAULT_CACHE_CAPACITY, OPTIMIZED, FsVariant, OpenMode, open_protected

CATEGORIES = ("clearing", "transitions", "reading", "overhead")
DEFAULT_RECORD_COUNTS = tuple(range(1000, 175_001, 1000))
_CHUNK_RECORDS = 4096


class Pattern(enum.Enum):
    SEQUENTIAL_INSERT = "insert"
    SEQUENTIAL_READ = "seqread"
    RANDOM_READ = "randread"

    @classmethod
    def parse(cls, text: str) -> Pattern:
        aliases = {"sequentialinsert": "insert", "sequentialread": "seqread", "randomread": "randread"}
        key = text.lower().replace("_", "").replace("-", "")
        return cls(aliases.get(key, key))


@dataclass(frozen=True)
class WorkloadSpec:
    pattern: Pattern = Pattern.RANDOM_READ
    record_counts: tuple[int, ...] = DEFAULT_RECORD_COUNTS
    record_size: int = 1024
    seed: int = 0
    variants: tuple[FsVariant, ...] = (BASELINE, OPTIMIZED)
    reps: int = 5
    warmup: int = 1  # untimed passes per variant before the timed reps
    queries: int | None = None  # random reads per rep; defaults to min(records, 10_000)
    cache_capacity: int = DEFAULT_CACHE_CAPACITY
    latency: str = "sgx-median"

    def __post_init__(self):
        if self.reps < 1:
            raise ValueError("reps must be positive")
        if self.warmup < 0:
            raise ValueError("warmup cannot be negative")
        if self.record_size <= 0:
            raise ValueError("record_size must be positive")

    def n_queries(self, records: int) -> int:
        if self.pattern is not Pattern.RANDOM_READ:
            return records
        return self.queries if self.queries is not None else min(records, 10_000)


def _records(seed: int, count: int, size: int) -> Iterator[bytes]:
    """Deterministic record payloads, generated in chunks."""
    rng = np.random.default_rng(seed)
    left = count
    while left:
        k = min(left, _CHUNK_RECORDS)
        block = rng.bytes(k * size)
        for i in range(k):
            yield block[i * size : (i + 1) * size]
        left -= k


def read_order(spec: WorkloadSpec, records: int) -> np.ndarray:
    if spec.pattern is Pattern.RANDOM_READ:
        rng = np.random.default_rng([spec.seed, records])
        return rng.integers(0, records, size=spec.n_queries(records))
    return np.arange(records)


@dataclass
class VariantResult:
    variant: str
    times: list[float]
    counters: BoundaryCounters
    checksum: str
    deterministic: bool = True

    @property
    def median(self) -> float:
        return float(np.median(self.times))

    def to_dict(self) -> dict:
        return {
            "variant": self.variant,
            "median_s": self.median,
            "times_s": self.times,
            "counters": self.counters.to_dict(),
            "checksum": self.checksum,
            "counters_deterministic": self.deterministic,
        }


@dataclass
class SizeResult:
    records: int
    results: dict[str, VariantResult]

    @property
    def speedup(self) -> float:
        """First variant's median over the second's; NaN with a single variant."""
        if len(self.results) != 2:
            return float("nan")
        base, opt = self.results.values()
        return base.median / opt.median if opt.median > 0 else float("inf")


@dataclass
class BenchReport:
    spec: WorkloadSpec
    sizes: list[SizeResult] = field(default_factory=list)

    @property
    def latency_model(self) -> LatencyModel:
        return LATENCY_PRESETS[self.spec.latency]

    def to_dict(self) -> dict:
        s = self.spec
        return {
            "pattern": s.pattern.value,
            "record_size": s.record_size,
            "seed": s.seed,
            "reps": s.reps,
            "warmup": s.warmup,
            "cache_capacity": s.cache_capacity,
            "latency_preset": s.latency,
            "sizes": [
                {
                    "records": r.records,
                    "queries": s.n_queries(r.records),
                    "speedup": r.speedup if math.isfinite(r.speedup) else None,
                    "variants": {k: v.to_dict() for k, v in r.results.items()},
                    "breakdown": profile_breakdown(self, r.records),
                }
                for r in self.sizes
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def to_csv(self) -> str:
        out = io.StringIO()
        w = csv.writer(out)
        w.writerow(["pattern", "records", "variant", "median_s", "ocalls", "bytes_cleared", "bytes_copied", "speedup"])
        for r in self.sizes:
            for name, v in r.results.items():
                c = v.counters
                w.writerow(
                    [self.spec.pattern.value, r.records, name, f"{v.median:.6f}", c.ocalls, c.bytes_cleared,
                     c.bytes_copied, f"{r.speedup:.4f}"]
                )
        return out.getvalue()

    def table(self) -> str:
        names = [_label(v) for v in self.spec.variants]
        head = f"{'records':>8}  " + "  ".join(f"{n + ' (s)':>22}" for n in names) + f"  {'speedup':>8}"
        lines = [f"pattern={self.spec.pattern.value} record_size={self.spec.record_size} reps={self.spec.reps}", head]
        for r in self.sizes:
            cells = "  ".join(f"{r.results[n].median:>22.4f}" for n in names)
            lines.append(f"{r.records:>8}  {cells}  {r.speedup:>8.2f}x")
        if self.sizes:
            last = self.sizes[-1].records
            lines.append(f"breakdown at {last} records:")
            for name, shares in profile_breakdown(self, last).items():
                cells = "  ".join(f"{c}={shares[c] * 100:5.1f}%" for c in CATEGORIES)
                lines.append(f"  {name:<16} {cells}")
        return "\n".join(lines)


def _label(v: FsVariant) -> str:
    return f"{v.mode.value}/{v.cipher.short}"


_CTX = SealingContext(bytes(32), bytes(32))


def _populate(path: str, spec: WorkloadSpec, variant: FsVariant, records: int) -> None:
    f = open_protected(path, OpenMode.CREATE_TRUNCATE, ctx=_CTX, variant=variant,
                       cache_capacity=spec.cache_capacity, boundary=Boundary())
    with f:
        for rec in _records(spec.seed, records, spec.record_size):
            f.write(rec)


def _run_once(path: str, spec: WorkloadSpec, variant: FsVariant, records: int, order: np.ndarray):
    boundary = Boundary(LATENCY_PRESETS[spec.latency])
    digest = hashlib.sha256()
    size = spec.record_size
    if spec.pattern is Pattern.SEQUENTIAL_INSERT:
        payloads = list(_records(spec.seed, records, size))
        t0 = time.perf_counter()
        f = open_protected(path, OpenMode.CREATE_TRUNCATE, ctx=_CTX, variant=variant,
                           cache_capacity=spec.cache_capacity, boundary=boundary)
        for rec in payloads:
            f.write(rec)
        f.close()
        elapsed = time.perf_counter() - t0
        for rec in payloads:
            digest.update(rec)
    else:
        out = []
        t0 = time.perf_counter()
        f = open_protected(path, OpenMode.READ, ctx=_CTX, variant=variant,
                           cache_capacity=spec.cache_capacity, boundary=boundary)
        for i in order.tolist():
            f.seek(i * size)
            out.append(f.read(size))
        f.close()
        elapsed = time.perf_counter() - t0
        for rec in out:
            digest.update(rec)
    return elapsed, boundary.snapshot(), digest.hexdigest()


def _readback_checksum(path: str, spec: WorkloadSpec, variant: FsVariant, records: int) -> str:
    digest = hashlib.sha256()
    with open_protected(path, OpenMode.READ, ctx=_CTX, variant=variant, boundary=Boundary()) as f:
        for _ in range(records):
            digest.update(f.read(spec.record_size))
    return digest.hexdigest()


def run_workload(spec: WorkloadSpec, workdir: str | os.PathLike | None = None) -> BenchReport:
    """Run every record count for every variant; medians over ``spec.reps``.

    All stores are populated before anything is timed, and the timed reps
    are interleaved with the variant order rotating each round, so drift in
    machine state lands on every variant alike.
    """
    report = BenchReport(spec)
    labels = [_label(v) for v in spec.variants]
    with tempfile.TemporaryDirectory(dir=workdir) as tmp:
        for records in spec.record_counts:
            order = read_order(spec, records)
            paths = {lab: str(Path(tmp) / f"store-{lab.replace('/', '-')}.db") for lab in labels}
            if spec.pattern is not Pattern.SEQUENTIAL_INSERT:
                for variant, lab in zip(spec.variants, labels):
                    _populate(paths[lab], spec, variant, records)
            times: dict[str, list[float]] = {lab: [] for lab in labels}
            first: dict[str, tuple[BoundaryCounters, str]] = {}
            same = dict.fromkeys(labels, True)
            pairs = list(zip(spec.variants, labels))
            for rnd in range(spec.warmup + spec.reps):
                shift = rnd % len(pairs)
                for variant, lab in pairs[shift:] + pairs[:shift]:
                    elapsed, counters, checksum = _run_once(paths[lab], spec, variant, records, order)
                    if rnd < spec.warmup:
                        continue
                    times[lab].append(elapsed)
                    if lab not in first:
                        first[lab] = (counters, checksum)
                    else:
                        c0, s0 = first[lab]
                        same[lab] &= counters.to_dict() == c0.to_dict() and checksum == s0
            results: dict[str, VariantResult] = {}
            for variant, lab in pairs:
                if spec.pattern is Pattern.SEQUENTIAL_INSERT:
                    same[lab] &= _readback_checksum(paths[lab], spec, variant, records) == first[lab][1]
                results[lab] = VariantResult(lab, times[lab], first[lab][0], first[lab][1], same[lab])
                os.unlink(paths[lab])
            report.sizes.append(SizeResult(records, results))
    return report


def breakdown_seconds(counters: BoundaryCounters, wall: float, model: LatencyModel) -> dict[str, float]:
    hz = model.cpu_hz
    return {
        "clearing": counters.bytes_cleared * model.clear_cycles_per_byte / hz,
        "transitions": counters.ocalls * model.crossing_cycles / hz,
        "reading": counters.bytes_copied * model.copy_cycles_per_byte / hz,
        "overhead": wall,
    }


def shares(seconds: dict[str, float]) -> dict[str, float]:
    total = sum(seconds.values())
    if total <= 0:
        return {c: (1.0 if c == "overhead" else 0.0) for c in CATEGORIES}
    return {c: seconds[c] / total for c in CATEGORIES}


def profile_breakdown(report: BenchReport, records: int | None = None) -> dict[str, dict[str, float]]:
    """Per-variant category shares at one record count (the largest by default)."""
    if not report.sizes:
        return {}
    by_size = {r.records: r for r in report.sizes}
    size = by_size[records if records is not None else report.sizes[-1].records]
    model = report.latency_model
    return {
        name: shares(breakdown_seconds(v.counters, v.median, model)) for name, v in size.results.items()
    }


def fstat_pattern(n_queries: int, cached: bool, variant: FsVariant = OPTIMIZED) -> int:
    """Ask a file's size ``n_queries`` times; return the metadata crossings."""
    with tempfile.TemporaryDirectory() as tmp:
        boundary = Boundary()
        with open_protected(Path(tmp) / "f", OpenMode.CREATE_TRUNCATE, ctx=_CTX, variant=variant,
                            boundary=boundary) as f:
            f.write(b"x" * 100)
            before = boundary.snapshot()
            for _ in range(n_queries):
                f.size_cached() if cached else f.size()
            return (boundary.snapshot() - before).ocalls_by_kind.get("stat", 0)
