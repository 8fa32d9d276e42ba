"""Filter-quality analysis: how an engine's evictions compare with MIN's.

Each eviction is scored by its TTA, the logical time from the eviction to
the victim's next request (∞ if it never returns).  The Belady boundary
``T`` is the smallest finite TTA among MIN's evictions; evictions at or
beyond ``T`` count as good.  Fractions are normalized by MIN's eviction
count, so an engine that evicts more often than MIN can exceed 100%.
"""

import math
from collections import Counter
from dataclasses import asdict, dataclass
from typing import Dict, Iterable, List, Sequence

INF = math.inf


class AnalysisError(ValueError):
    """The analysis does not apply (e.g. MIN never evicted)."""


@dataclass(frozen=True)
class EvictionRecord:
    key: int
    evict_time: int
    tta: float


@dataclass(frozen=True)
class FilterQuality:
    T: float
    frac_below: float
    frac_above: float
    evictions: int
    min_evictions: int

    def to_dict(self):
        return asdict(self)


def eviction_records(log: Iterable, next_access: Sequence[float]) -> List[EvictionRecord]:
    """Score a Cache eviction log against the trace's next-access index."""
    return [EvictionRecord(e.key, e.time, next_access[e.last_access] - e.time) for e in log]


def belady_boundary(min_records: Sequence[EvictionRecord], trace_length: int) -> float:
    if not min_records:
        raise AnalysisError("MIN evicted nothing; the cache never filled")
    finite = [r.tta for r in min_records if r.tta != INF]
    return float(min(finite)) if finite else float(trace_length)


def classify(records: Iterable[EvictionRecord], T: float, min_count: int) -> FilterQuality:
    if min_count < 1:
        raise AnalysisError("min_count must be ≥ 1")
    below = above = 0
    for r in records:
        if r.tta >= T:
            above += 1
        else:
            below += 1
    return FilterQuality(T, below / min_count, above / min_count, below + above, min_count)


def tta_bucket(tta) -> object:
    """``b`` such that ``2**b <= tta < 2**(b+1)``; ``"inf"`` for ∞, -1 for 0."""
    if tta == INF:
        return "inf"
    return int(tta).bit_length() - 1


def tta_histogram(records: Iterable[EvictionRecord]) -> Dict[object, int]:
    return dict(Counter(tta_bucket(r.tta) for r in records))


def histogram_rows(histograms: Dict[str, Dict[object, int]]):
    """Flatten ``{engine: histogram}`` into sorted ``(engine, bucket, count)`` rows."""
    rows = []
    for engine, hist in histograms.items():
        finite = sorted(b for b in hist if b != "inf")
        for b in finite:
            rows.append((engine, b, hist[b]))
        if "inf" in hist:
            rows.append((engine, "inf", hist["inf"]))
    return rows


def write_eviction_log(records: Iterable[EvictionRecord], fh):
    fh.write("evict_time,key,tta\n")
    for r in records:
        tta = "inf" if r.tta == INF else str(int(r.tta))
        fh.write(f"{r.evict_time},{r.key},{tta}\n")


def read_eviction_log(fh) -> List[EvictionRecord]:
    lines = iter(fh)
    header = next(lines).strip()
    if header != "evict_time,key,tta":
        raise ValueError(f"unexpected eviction log header {header!r}")
    out = []
    for line in lines:
        line = line.strip()
        if not line:
            continue
        t, k, tta = line.split(",")
        out.append(EvictionRecord(int(k), int(t), INF if tta == "inf" else int(tta)))
    return out
