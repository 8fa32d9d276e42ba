import json

import pytest
from hypothesis import given
from hypothesis import strategies as st

from matcache.cache import Cache, CacheConfig, HeuristicEngine, SimReport, simulate
from matcache.heuristics import LRU, make_policy
from matcache.trace import Request, SyntheticSpec, generate_zipf, unique_bytes


def lru_cache(capacity, **kw):
    return Cache(CacheConfig(capacity, **kw), HeuristicEngine(LRU()), log_evictions=True)


def test_capacity_arithmetic_sequence():
    c = lru_cache(100)
    assert c.process(Request(0, 1, 60)) is False
    assert c.used_bytes == 60
    assert c.process(Request(1, 1, 60)) is True
    assert c.used_bytes == 60
    assert c.process(Request(2, 2, 60)) is False
    assert [e.key for e in c.log] == [1]
    assert c.used_bytes == 60 and 2 in c and 1 not in c


def test_byte_miss_ratio_definition():
    c = lru_cache(100)
    c.process(Request(0, 1, 60))
    c.process(Request(1, 1, 60))
    r = c.report()
    assert r.byte_miss_ratio == 0.5
    assert r.object_miss_ratio == 0.5
    assert r.requests == 2 and r.evictions == 0


def test_no_post_warmup_requests():
    c = lru_cache(100, warmup_requests=5)
    c.process(Request(0, 1, 60))
    r = c.report()
    assert r.no_samples is True
    assert (r.byte_miss_ratio, r.object_miss_ratio, r.requests) == (0.0, 0.0, 0)


def test_compulsory_misses_only():
    reqs = generate_zipf(SyntheticSpec(500, 0.9, 20_000, ("lognormal", 4.0, 1.0), seed=5))
    total = sum(r.size for r in reqs)
    ub = unique_bytes(reqs)
    report, _ = simulate(reqs, CacheConfig(ub), HeuristicEngine(LRU()))
    assert report.byte_miss_ratio == pytest.approx(ub / total, rel=1e-12)
    assert report.evictions == 0


def test_oversized_objects_are_bypassed():
    c = lru_cache(10)
    assert c.process(Request(0, 1, 11)) is False
    assert c.process(Request(1, 1, 11)) is False
    assert 1 not in c and c.used_bytes == 0
    assert c.report().byte_miss_ratio == 1.0


def test_warmup_excluded_from_stats_but_mutates_state():
    c = lru_cache(100, warmup_requests=1)
    c.process(Request(0, 1, 60))
    c.process(Request(1, 1, 60))
    r = c.report()
    assert r.requests == 1 and r.byte_miss_ratio == 0.0


def test_config_validation():
    with pytest.raises(ValueError):
        CacheConfig(0)
    with pytest.raises(ValueError):
        CacheConfig(10, warmup_requests=-1)


def test_report_serialization():
    r = SimReport(0.25, 0.5, 4, 1, 2.0, 1.0, 0)
    d = json.loads(r.to_json(engine="heuristic"))
    assert d["schema_version"] == 1 and d["engine"] == "heuristic"
    assert SimReport.csv_columns()[0] == "byte_miss_ratio"
    assert r.csv_values()[-1] == "false"


sized = st.lists(st.tuples(st.integers(0, 15), st.integers(1, 40)), min_size=1, max_size=200)


@given(rows=sized, capacity=st.integers(1, 100), algo=st.sampled_from(["lru", "fifo", "lfuda", "lruk", "2q"]))
def test_state_machine_invariants(rows, capacity, algo):
    sizes = {}
    reqs = []
    for t, (k, s) in enumerate(rows):
        reqs.append(Request(t, k, sizes.setdefault(k, s)))
    c = Cache(CacheConfig(capacity), HeuristicEngine(make_policy(algo, capacity)), log_evictions=True)
    shadow = set()
    for r in reqs:
        hit = c.process(r)
        assert hit == (r.key in shadow)
        if not hit and r.size <= capacity:
            shadow.add(r.key)
        for e in c.log:
            shadow.discard(e.key)
        c.log.clear()
        assert c.used_bytes <= capacity
        assert c.used_bytes == sum(c.sizes.values())
        assert set(c.sizes) == shadow


@given(keys=st.lists(st.integers(0, 10), min_size=1, max_size=200), capacity=st.integers(1, 6))
def test_evictions_equal_admissions_minus_residents(keys, capacity):
    reqs = [Request(t, k, 1) for t, k in enumerate(keys)]
    report, cache = simulate(reqs, CacheConfig(capacity), HeuristicEngine(LRU()))
    admissions = round(report.object_miss_ratio * report.requests)
    assert report.evictions == admissions - len(cache)
