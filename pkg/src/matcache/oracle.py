"""Offline Belady MIN and the random-sampling learned baseline."""

import heapq
import math
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np

from .cache import EvictionEngine
from .features import FEATURE_NAMES, build_features
from .gbdt import GbdtConfig
from .mat import LearnedEngine, MatConfig, TtaFn
from .rng import substream

INF = math.inf


def build_next_access(requests) -> List[float]:
    """``next[t]`` is the position of the next request for the key at ``t``, or ∞."""
    keys = [r.key for r in requests]
    nxt: List[float] = [INF] * len(keys)
    seen = {}
    for t in range(len(keys) - 1, -1, -1):
        k = keys[t]
        nxt[t] = seen.get(k, INF)
        seen[k] = t
    return nxt


class BeladyEngine(EvictionEngine):
    """Evict the resident whose next request is furthest away.

    Ties (all never-requested-again) go to the least recently used, then to
    the smaller key.  With variable sizes this is the greedy variant: the
    Cache keeps calling ``evict`` until the incoming object fits.
    """

    name = "belady"

    def __init__(self, next_access: Sequence[float]):
        super().__init__()
        self.next_access = next_access
        self._heap = []
        self._live = {}

    def _rank(self, req):
        entry = (-self.next_access[req.time], req.time, req.key)
        self._live[req.key] = entry
        heapq.heappush(self._heap, entry)
        if len(self._heap) > 4 * len(self._live) + 64:
            self._heap = list(self._live.values())
            heapq.heapify(self._heap)

    on_hit = _rank
    on_admit = _rank

    def next_of(self, key):
        return -self._live[key][0]

    def evict(self, now):
        heap, live = self._heap, self._live
        while heap:
            entry = heapq.heappop(heap)
            key = entry[2]
            if live.get(key) is entry:
                del live[key]
                return key
        raise IndexError("evict from an empty cache")


@dataclass(frozen=True)
class SamplerConfig:
    sample_n: int = 64
    seed: int = 0

    def __post_init__(self):
        if self.sample_n < 1:
            raise ValueError("sample_n must be ≥ 1")


class SampledEngine(LearnedEngine):
    """LRB-style eviction: predict TTA on a uniform sample of residents and
    evict the largest.

    Training data is sampled rather than filtered: every access is tagged,
    and so is every resident drawn for an eviction sample, which gives the
    model snapshots across the whole age range.  Residents' feature rows live
    in a dense matrix (column 0 holds the last access time) so a sample is
    one fancy-index away.
    """

    name = "sampled"

    def __init__(self, sampler: Optional[SamplerConfig] = None, config: Optional[MatConfig] = None,
                 gbdt_config: Optional[GbdtConfig] = None, tta_fn: Optional[TtaFn] = None,
                 dump_path=None):
        config = config or MatConfig()
        super().__init__(config, gbdt_config, tta_fn, dump_path)
        self.sampler = sampler or SamplerConfig(seed=config.seed)
        self._rng = substream(self.sampler.seed, "sampler")
        self._keys = []
        self._slot = {}
        self._rows = np.empty((256, len(FEATURE_NAMES)), dtype=np.float64)

    def on_request(self, req, hit):
        super().on_request(req, hit)
        if self._will_hold(req, hit):
            self.tag(req.key, req.time)

    def _write_row(self, key):
        meta = self.metas[key]
        row = build_features(meta, meta.last_access)
        row[0] = meta.last_access
        self._rows[self._slot[key]] = row

    def on_hit(self, req):
        self._write_row(req.key)

    def on_admit(self, req):
        i = len(self._keys)
        if i == len(self._rows):
            self._rows = np.concatenate([self._rows, np.empty_like(self._rows)])
        self._slot[req.key] = i
        self._keys.append(req.key)
        self._write_row(req.key)

    def _remove(self, key):
        i = self._slot.pop(key)
        last = self._keys.pop()
        if last != key:
            self._keys[i] = last
            self._slot[last] = i
            self._rows[i] = self._rows[len(self._keys)]

    def evict(self, now):
        keys = self._keys
        n = len(keys)
        if not self.ml_ready:
            victim = keys[int(self._rng.integers(n))]
            self.fallback_evictions += 1
        else:
            m = min(self.sampler.sample_n, n)
            idx = self._rng.choice(n, m, replace=False) if m < n else np.arange(n)
            sample = [keys[i] for i in idx.tolist()]
            X = self._rows[idx]
            last_access = X[:, 0].copy()
            X[:, 0] = now - last_access
            if self.tta_fn is not None:
                ttas = np.asarray(self.tta_fn(sample, now), dtype=np.float64)
            else:
                ttas = self.ttas_from_rows(X)
            self.predictions += m
            lasts = last_access.astype(np.int64).tolist()
            self.buffer.tag_rows(sample, X, now, lasts)
            top = np.flatnonzero(ttas == ttas.max())
            if len(top) == 1:
                victim = sample[top[0]]
            else:
                # ties: least recently used, then smaller key
                victim = min((lasts[j], sample[j]) for j in top.tolist())[1]
        self._remove(victim)
        self.forget(victim)
        return victim


def oracle_tta(next_access, cache):
    """A perfect TTA predictor for tests: true time to the next request."""

    def tta_fn(keys, now):
        last = cache.last_access
        return [next_access[last[k]] - now for k in keys]

    return tta_fn
