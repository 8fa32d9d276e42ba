"""Cache state machine and the request-replay loop."""

import json
from dataclasses import asdict, dataclass, fields
from typing import Iterable, List, Optional

from .heuristics import PriorityCache

REPORT_SCHEMA_VERSION = 1


@dataclass(frozen=True)
class CacheConfig:
    capacity_bytes: int
    warmup_requests: int = 0
    seed: int = 0

    def __post_init__(self):
        if self.capacity_bytes < 1:
            raise ValueError("capacity_bytes must be ≥ 1")
        if self.warmup_requests < 0:
            raise ValueError("warmup_requests must be ≥ 0")


@dataclass
class SimReport:
    byte_miss_ratio: float
    object_miss_ratio: float
    requests: int
    evictions: int
    predictions_per_eviction: float
    training_samples_per_eviction: float
    fallback_evictions: int
    no_samples: bool = False

    def to_dict(self):
        d = {"schema_version": REPORT_SCHEMA_VERSION}
        d.update(asdict(self))
        return d

    def to_json(self, **extra) -> str:
        d = self.to_dict()
        d.update(extra)
        return json.dumps(d, sort_keys=True)

    @classmethod
    def csv_columns(cls) -> List[str]:
        return [f.name for f in fields(cls)]

    def csv_values(self) -> List[str]:
        return [_fmt(getattr(self, name)) for name in self.csv_columns()]


def _fmt(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    return repr(v) if isinstance(v, float) else str(v)


@dataclass(frozen=True)
class Eviction:
    time: int
    key: int
    last_access: int


class EvictionEngine:
    """Base engine: chooses victims; the Cache owns residency and bytes.

    Counters (``predictions``, ``training_samples``, ``fallback_evictions``)
    are cumulative; the Cache subtracts their value at the end of warmup.
    """

    name = "engine"

    def __init__(self):
        self.cache = None
        self.predictions = 0
        self.training_samples = 0
        self.fallback_evictions = 0

    def bind(self, cache: "Cache"):
        self.cache = cache

    def on_request(self, req, hit: bool):
        pass

    def on_hit(self, req):
        pass

    def on_admit(self, req):
        pass

    def evict(self, now: int):
        """Return a resident key; the engine forgets it before returning."""
        raise NotImplementedError

    def counters(self):
        return (self.predictions, self.training_samples, self.fallback_evictions)


class HeuristicEngine(EvictionEngine):
    name = "heuristic"

    def __init__(self, policy: PriorityCache):
        super().__init__()
        self.policy = policy

    def on_hit(self, req):
        self.policy.touch(req.key)

    def on_admit(self, req):
        self.policy.admit(req.key, req.size)

    def evict(self, now):
        key = self.policy.remove_from_tail()
        self.policy.delete(key)
        return key


class Cache:
    """Metadata-only byte-capacity cache driven by an :class:`EvictionEngine`.

    Objects larger than the capacity are bypassed (counted as misses).  Warmup
    requests mutate state but are excluded from every reported statistic.
    """

    def __init__(self, config: CacheConfig, engine: EvictionEngine, log_evictions=False):
        self.config = config
        self.engine = engine
        self.sizes = {}
        self.last_access = {}
        self.used_bytes = 0
        self.log: Optional[List[Eviction]] = [] if log_evictions else None
        self._seen = 0
        self._req = self._req_bytes = self._miss = self._miss_bytes = 0
        self._evictions = 0
        self._bypassed = 0
        self._baseline = (0, 0, 0)
        engine.bind(self)
        if config.warmup_requests == 0:
            self._baseline = engine.counters()

    def __contains__(self, key):
        return key in self.sizes

    def __len__(self):
        return len(self.sizes)

    def process(self, req) -> bool:
        """Serve one request; returns True on a hit."""
        key, size, now = req.key, req.size, req.time
        counting = self._seen >= self.config.warmup_requests
        self._seen += 1
        hit = key in self.sizes
        engine = self.engine
        engine.on_request(req, hit)
        if hit:
            engine.on_hit(req)
        elif size > self.config.capacity_bytes:
            if counting:
                self._bypassed += 1
        else:
            capacity = self.config.capacity_bytes
            while self.used_bytes + size > capacity:
                victim = engine.evict(now)
                self.used_bytes -= self.sizes.pop(victim)
                last = self.last_access.pop(victim)
                if counting:
                    self._evictions += 1
                if self.log is not None:
                    self.log.append(Eviction(now, victim, last))
            self.sizes[key] = size
            self.used_bytes += size
            engine.on_admit(req)
        if key in self.sizes:
            self.last_access[key] = now
        if counting:
            self._req += 1
            self._req_bytes += size
            if not hit:
                self._miss += 1
                self._miss_bytes += size
        if self._seen == self.config.warmup_requests:
            self._baseline = engine.counters()
        return hit

    def run(self, requests: Iterable) -> "SimReport":
        for req in requests:
            self.process(req)
        return self.report()

    def report(self) -> SimReport:
        preds, samples, fallback = (
            now - base for now, base in zip(self.engine.counters(), self._baseline)
        )
        if self._seen <= self.config.warmup_requests:
            preds = samples = fallback = 0
        ev = self._evictions
        if self._req == 0:
            return SimReport(0.0, 0.0, 0, ev, 0.0, 0.0, fallback, no_samples=True)
        return SimReport(
            byte_miss_ratio=self._miss_bytes / self._req_bytes,
            object_miss_ratio=self._miss / self._req,
            requests=self._req,
            evictions=ev,
            predictions_per_eviction=preds / ev if ev else 0.0,
            training_samples_per_eviction=samples / ev if ev else 0.0,
            fallback_evictions=fallback,
        )


def simulate(requests, config: CacheConfig, engine: EvictionEngine, log_evictions=False):
    """Replay ``requests`` and return ``(report, cache)``."""
    cache = Cache(config, engine, log_evictions=log_evictions)
    report = cache.run(requests)
    return report, cache
