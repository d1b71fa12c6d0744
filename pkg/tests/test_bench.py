from __future__ import annotations

import csv
import io
import json

import numpy as np
import pytest

from wasmtee.bench import (
    CATEGORIES,
    DEFAULT_RECORD_COUNTS,
    BenchReport,
    Pattern,
    WorkloadSpec,
    breakdown_seconds,
    fstat_pattern,
    profile_breakdown,
    read_order,
    run_workload,
    shares,
)
from wasmtee.boundary import LATENCY_PRESETS, BoundaryCounters
from wasmtee.pfs import BASELINE, OPTIMIZED

SMALL = dict(record_counts=(300, 600), reps=2, cache_capacity=8)


@pytest.fixture(scope="module")
def randread():
    return run_workload(WorkloadSpec(pattern=Pattern.RANDOM_READ, queries=200, **SMALL))


def test_fstat_pattern():
    assert fstat_pattern(1000, cached=False) == 1000
    assert fstat_pattern(1000, cached=True) <= 1
    assert fstat_pattern(0, cached=False) == 0
    assert fstat_pattern(0, cached=True) == 0
    assert fstat_pattern(50, cached=False, variant=BASELINE) == 50


def test_defaults():
    spec = WorkloadSpec()
    assert spec.record_size == 1024 and spec.reps >= 5
    assert DEFAULT_RECORD_COUNTS[0] == 1000 and DEFAULT_RECORD_COUNTS[-1] == 175_000
    assert spec.variants == (BASELINE, OPTIMIZED)
    with pytest.raises(ValueError):
        WorkloadSpec(reps=0)
    with pytest.raises(ValueError):
        WorkloadSpec(warmup=-1)


@pytest.mark.parametrize("text,pattern", [("insert", Pattern.SEQUENTIAL_INSERT), ("SequentialRead", Pattern.SEQUENTIAL_READ),
                                          ("random-read", Pattern.RANDOM_READ), ("randread", Pattern.RANDOM_READ)])
def test_pattern_parse(text, pattern):
    assert Pattern.parse(text) is pattern


def test_read_order_deterministic():
    spec = WorkloadSpec(seed=4, queries=100)
    a, b = read_order(spec, 1000), read_order(spec, 1000)
    assert np.array_equal(a, b) and a.min() >= 0 and a.max() < 1000
    assert not np.array_equal(a, read_order(WorkloadSpec(seed=5, queries=100), 1000))
    assert np.array_equal(read_order(WorkloadSpec(pattern=Pattern.SEQUENTIAL_READ), 10), np.arange(10))


def test_variants_agree_and_counters_are_deterministic(randread):
    for size in randread.sizes:
        base, opt = size.results["baseline/etm"], size.results["optimized/mte"]
        assert base.checksum == opt.checksum
        assert base.deterministic and opt.deterministic
        assert base.counters.ocalls == opt.counters.ocalls
        assert len(base.times) == 2


def test_same_seed_same_counters():
    spec = WorkloadSpec(pattern=Pattern.SEQUENTIAL_INSERT, record_counts=(200,), reps=1)
    a, b = run_workload(spec), run_workload(spec)
    for name in a.sizes[0].results:
        assert a.sizes[0].results[name].counters.to_dict() == b.sizes[0].results[name].counters.to_dict()
        assert a.sizes[0].results[name].checksum == b.sizes[0].results[name].checksum


@pytest.mark.parametrize("pattern", list(Pattern))
def test_accounting_properties(pattern):
    report = run_workload(WorkloadSpec(pattern=pattern, queries=100, **SMALL))
    for size in report.sizes:
        base, opt = size.results["baseline/etm"], size.results["optimized/mte"]
        admissions = base.counters.ocalls_by_kind.get("read_node", 0)
        assert opt.counters.bytes_cleared == 0
        assert base.counters.bytes_cleared > 0
        assert base.counters.bytes_cleared >= 8192 * admissions
        assert base.counters.bytes_copied_in >= 4096 * admissions
        assert opt.counters.bytes_copied_in == 0
        assert base.checksum == opt.checksum


def test_breakdown_shares(randread):
    table = profile_breakdown(randread)
    assert set(table) == {"baseline/etm", "optimized/mte"}
    for name, s in table.items():
        assert set(s) == set(CATEGORIES)
        assert sum(s.values()) == pytest.approx(1.0, abs=1e-3)
        assert all(v >= 0 for v in s.values())
    assert table["optimized/mte"]["clearing"] == 0.0
    assert table["baseline/etm"]["clearing"] > 0.0
    assert profile_breakdown(randread, 300).keys() == table.keys()
    assert profile_breakdown(BenchReport(WorkloadSpec())) == {}


def test_breakdown_formula():
    model = LATENCY_PRESETS["sgx-median"]
    c = BoundaryCounters(ocalls=10, bytes_copied_in=1000, bytes_cleared=2000)
    sec = breakdown_seconds(c, 0.5, model)
    assert sec["transitions"] == pytest.approx(10 * 14_170 / 3.8e9)
    assert sec["clearing"] == pytest.approx(2000 * model.clear_cycles_per_byte / 3.8e9)
    assert sec["reading"] == pytest.approx(1000 * model.copy_cycles_per_byte / 3.8e9)
    assert sec["overhead"] == 0.5
    assert shares({c: 0.0 for c in CATEGORIES})["overhead"] == 1.0


def test_outputs(randread):
    doc = json.loads(randread.to_json())
    assert doc["pattern"] == "randread" and len(doc["sizes"]) == 2
    first = doc["sizes"][0]
    assert first["queries"] == 200 and first["speedup"] > 0 and doc["warmup"] == 1
    assert first["variants"]["baseline/etm"]["counters"]["bytes_cleared"] > 0
    rows = list(csv.DictReader(io.StringIO(randread.to_csv())))
    assert len(rows) == 4 and {r["variant"] for r in rows} == {"baseline/etm", "optimized/mte"}
    text = randread.table()
    assert "speedup" in text and "clearing=" in text


def test_single_variant_has_no_speedup():
    report = run_workload(WorkloadSpec(pattern=Pattern.SEQUENTIAL_READ, record_counts=(50,), reps=1,
                                       variants=(OPTIMIZED,)))
    assert report.sizes[0].speedup != report.sizes[0].speedup
    assert report.to_dict()["sizes"][0]["speedup"] is None
