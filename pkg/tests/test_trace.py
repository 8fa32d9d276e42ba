import io
from collections import Counter

import pytest
from hypothesis import given
from hypothesis import strategies as st

from matcache.trace import (
    Request,
    SyntheticSpec,
    TraceFormatError,
    generate_zipf,
    load_trace,
    parse_synthetic,
    parse_trace,
    unique_bytes,
    write_trace,
    zipf_pmf,
)

from .oracles import harmonic


def test_direct_field_mapping():
    assert parse_trace("0 7 100\n1 7 100") == [Request(0, 7, 100), Request(1, 7, 100)]


def test_zero_size_is_rejected_with_line_number():
    with pytest.raises(TraceFormatError, match="size must be ≥ 1 at line 1"):
        parse_trace("5 9 0")


def test_fixture_line_count_matches_wc(fixture_trace):
    data_lines = [
        line for line in fixture_trace.read_text().splitlines() if line.strip() and not line.startswith("#")
    ]
    reqs = load_trace(fixture_trace)
    assert len(reqs) == len(data_lines) == 1000
    assert [r.time for r in reqs] == list(range(1000))


def test_time_is_position_not_file_stamp():
    reqs = parse_trace("# header\n900 1 5\n\n905 2 6\n")
    assert [r.time for r in reqs] == [0, 1]
    assert [r.stamp for r in reqs] == [900, 905]


def test_bytes_input_is_accepted():
    assert parse_trace(b"3 4 5\n") == [Request(0, 4, 5)]


@pytest.mark.parametrize(
    "body, message",
    [
        ("1 2\n", "expected 3 fields"),
        ("1 x 3\n", "non-numeric field at line 1"),
        ("0 1 1\n0 1 -4\n", "size must be ≥ 1 at line 2"),
        ("0 -1 3\n", "64-bit"),
    ],
)
def test_malformed_lines(body, message):
    with pytest.raises(TraceFormatError, match=message):
        parse_trace(body)


def test_single_object_universe():
    reqs = generate_zipf(SyntheticSpec(1, 1.0, 3, ("fixed", 10), seed=1))
    assert reqs == [Request(0, 1, 10), Request(1, 1, 10), Request(2, 1, 10)]


def test_rank_one_frequency_matches_harmonic_share():
    reqs = generate_zipf(SyntheticSpec(100, 1.0, 100_000, seed=42))
    share = 1.0 / harmonic(100, 1.0)
    observed = Counter(r.key for r in reqs)[1] / len(reqs)
    assert abs(observed - share) <= 0.1 * share


def test_pmf_matches_harmonic_normalization():
    pmf = zipf_pmf(50, 0.7)
    h = harmonic(50, 0.7)
    for rank in (1, 2, 17, 50):
        assert pmf[rank - 1] == pytest.approx(1 / rank**0.7 / h, rel=1e-12)


def test_generation_is_deterministic():
    spec = SyntheticSpec(300, 0.9, 5000, ("lognormal", 6.0, 1.0), seed=11)
    a, b = io.StringIO(), io.StringIO()
    write_trace(generate_zipf(spec), a)
    write_trace(generate_zipf(spec), b)
    assert a.getvalue() == b.getvalue()


def test_seed_changes_stream():
    a = generate_zipf(SyntheticSpec(300, 0.9, 2000, seed=1))
    b = generate_zipf(SyntheticSpec(300, 0.9, 2000, seed=2))
    assert [r.key for r in a] != [r.key for r in b]


def test_sizes_are_sticky_per_key():
    reqs = generate_zipf(SyntheticSpec(200, 0.8, 5000, ("lognormal", 5.0, 2.0), seed=3))
    sizes = {}
    for r in reqs:
        assert sizes.setdefault(r.key, r.size) == r.size
        assert r.size >= 1
    assert unique_bytes(reqs) == sum(sizes.values())


@pytest.mark.parametrize(
    "kwargs",
    [dict(universe=0, alpha=1, requests=1), dict(universe=1, alpha=0, requests=1),
     dict(universe=1, alpha=1, requests=0), dict(universe=1, alpha=1, requests=1, size_dist=("fixed", 0)),
     dict(universe=1, alpha=1, requests=1, size_dist=("uniform", 1, 2))],
)
def test_invalid_synthetic_spec(kwargs):
    with pytest.raises(ValueError):
        SyntheticSpec(**kwargs)


def test_parse_synthetic():
    spec = parse_synthetic("zipf:n=10,alpha=1.2,req=50,size=lognormal:3:0.5,seed=9")
    assert spec == SyntheticSpec(10, 1.2, 50, ("lognormal", 3.0, 0.5), 9)
    assert parse_synthetic("zipf:n=5,alpha=1,req=7,size=fixed:1").size_dist == ("fixed", 1)
    for bad in ("uniform:n=1", "zipf:n=1,bogus=2", "zipf:n", "zipf:size=fixed"):
        with pytest.raises(ValueError):
            parse_synthetic(bad)


requests_st = st.lists(
    st.tuples(st.integers(0, 2**63), st.integers(0, 2**64 - 1), st.integers(1, 2**40)), max_size=50
)


@given(requests_st)
def test_round_trip(rows):
    reqs = [Request(i, k, s, stamp) for i, (stamp, k, s) in enumerate(rows)]
    buf = io.StringIO()
    write_trace(reqs, buf)
    back = parse_trace(buf.getvalue())
    assert back == reqs
    assert [r.stamp for r in back] == [r.stamp for r in reqs]
