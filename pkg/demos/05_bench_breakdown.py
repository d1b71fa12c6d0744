"""
Record-store benchmark: where the time goes
===========================================

Fixed-size records in one protected file, read back at random.  The
baseline variant copies every node into protected memory and clears its
buffers; the optimized one decrypts straight from the untrusted view.
Counters are exact, wall times depend on the machine.
"""

from __future__ import annotations

from wasmtee.bench import CATEGORIES, Pattern, WorkloadSpec, fstat_pattern, profile_breakdown, run_workload

spec = WorkloadSpec(pattern=Pattern.RANDOM_READ, record_counts=(2_000, 8_000, 20_000), reps=5, queries=4_000)
report = run_workload(spec)
print(report.table())

# %%
# Counter view at the largest size.
last = report.sizes[-1]
for name, result in last.results.items():
    c = result.counters
    admissions = c.ocalls_by_kind.get("read_node", 0)
    print(f"{name:>14}: {admissions} node fetches, {c.bytes_cleared / max(admissions, 1):.0f} B cleared "
          f"and {c.bytes_copied_in / max(admissions, 1):.0f} B copied per fetch")

# %%
# Category shares (simulated boundary costs plus measured in-process time).
for name, shares in profile_breakdown(report).items():
    print(f"{name:>14}: " + "  ".join(f"{c} {shares[c]:6.1%}" for c in CATEGORIES))

# %%
# Size queries: asking the host every time versus answering from metadata.
print("fstat x1000 uncached:", fstat_pattern(1000, cached=False), "crossings")
print("fstat x1000 cached  :", fstat_pattern(1000, cached=True), "crossings")
