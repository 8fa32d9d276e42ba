"""MAT eviction: a heuristic queue nominates tail candidates, a learned
time-to-next-access (TTA) model confirms or vetoes them.

The engine is synchronous.  Candidates pulled from the heuristic tail are
tagged for training; when a tagged object is requested again, its stored
feature snapshot becomes a training sample labelled with the observed
distance since its previous access.  Every ``train_batch`` samples the model
is retrained and swapped in.
"""

import csv
import logging
import math
import sys
from collections import OrderedDict
from dataclasses import dataclass, replace
from typing import Callable, List, Optional, Sequence

import numpy as np

from . import gbdt
from .cache import EvictionEngine
from .features import DEFAULT_EDC_OFFSET, FEATURE_NAMES, ObjectMeta, build_features, on_access
from .heuristics import PriorityCache
from .rng import py_substream

log = logging.getLogger(__name__)

# (keys, now) -> TTA estimates; replaces the learned model when given
TtaFn = Callable[[Sequence[int], int], Sequence[float]]


@dataclass(frozen=True)
class MatConfig:
    k: int = 2
    delta: float = 1e-4
    L: int = 10
    batch_B: int = 64
    train_batch: int = 65536
    T0: Optional[float] = None
    stall_prob: float = 0.0
    censored_labels: bool = False
    label_horizon: int = 1 << 20
    staleness: Optional[int] = None
    log_target: bool = True
    ghost_meta: bool = False
    edc_offset: int = DEFAULT_EDC_OFFSET
    seed: int = 0

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be ≥ 1")
        if not 0 < self.delta < 1:
            raise ValueError("delta must be in (0, 1)")
        if self.L < self.k:
            raise ValueError("L must be ≥ k")
        if self.batch_B < 1 or self.train_batch < 2:
            raise ValueError("batch_B ≥ 1 and train_batch ≥ 2 required")
        if not 0 <= self.stall_prob <= 1:
            raise ValueError("stall_prob must be in [0, 1]")
        if self.T0 is not None and not self.T0 > 0:
            raise ValueError("T0 must be > 0")
        if self.label_horizon < 1:
            raise ValueError("label_horizon must be ≥ 1")

    @property
    def staleness_bound(self):
        return self.train_batch if self.staleness is None else self.staleness


# T is kept inside the positive normal floats (long one-sided runs with a
# large delta would otherwise underflow to 0 or overflow to inf)
_T_MIN = sys.float_info.min
_T_MAX = sys.float_info.max


def adjust_threshold(T: float, r: int, k: int, delta: float) -> float:
    """Nudge T so the realized candidate count per eviction tracks ``k``."""
    if r > k:
        return max(T * (1.0 - delta), _T_MIN)
    if r < k:
        return min(T * (1.0 + delta), _T_MAX)
    return T


def estimate_tta(predicted_distance, age):
    """Remaining time to next access from a predicted reuse distance.

    An overdue object (age past the predicted distance) gets the overshoot as
    its estimate, so objects long past their expected return become evictable.
    Works elementwise on arrays.
    """
    if np.ndim(predicted_distance) == 0 and np.ndim(age) == 0:
        if predicted_distance >= age:
            return predicted_distance - age
        return age - predicted_distance
    predicted_distance, age = np.asarray(predicted_distance), np.asarray(age)
    return np.where(predicted_distance >= age, predicted_distance - age, age - predicted_distance)


class TrainingBuffer:
    """Tagged candidates awaiting a label, plus labelled samples.

    ``pending`` maps key -> (feature snapshot, tag tick, last access at tag);
    it is insertion ordered so expiry is a scan from the front.
    """

    def __init__(self):
        self.pending = OrderedDict()
        self.ready = []

    def tag(self, key, features, now, last_access):
        self.pending.pop(key, None)
        self.pending[key] = (features, now, last_access)

    def tag_rows(self, keys, rows, now, last_accesses):
        pending = self.pending
        for key, row, last in zip(keys, rows, last_accesses):
            pending[key] = (row, now, last)
            pending.move_to_end(key)

    def label(self, key, now):
        entry = self.pending.pop(key, None)
        if entry is None:
            return None
        features, _, last_access = entry
        sample = (features, now - last_access)
        self.ready.append(sample)
        return sample

    def expire(self, now, horizon, censored=False):
        """Drop tags older than ``horizon``; emit censored samples if asked."""
        out = []
        pending = self.pending
        while pending:
            key, (features, tagged_at, last_access) = next(iter(pending.items()))
            if now - tagged_at < horizon:
                break
            del pending[key]
            if censored:
                sample = (features, max(now - last_access, horizon))
                self.ready.append(sample)
                out.append(sample)
        return out


def tag_candidate(buffer: TrainingBuffer, meta: ObjectMeta, now: int):
    if meta.last_access is None:
        raise ValueError(f"object {meta.key} has no recorded access")
    meta.tagged = True
    buffer.tag(meta.key, build_features(meta, now), now, meta.last_access)


def label_on_access(buffer: TrainingBuffer, key, now):
    return buffer.label(key, now)


class LearnedEngine(EvictionEngine):
    """Metadata table, tag/label pipeline and model lifecycle shared by the
    MAT engine and the sampling baseline."""

    def __init__(self, config: MatConfig, gbdt_config: Optional[gbdt.GbdtConfig] = None,
                 tta_fn: Optional[TtaFn] = None, dump_path=None):
        super().__init__()
        self.config = config
        self.gbdt_config = gbdt_config or gbdt.GbdtConfig(seed=config.seed)
        self.tta_fn = tta_fn
        self.metas = {}
        self.buffer = TrainingBuffer()
        self.model: Optional[gbdt.Model] = None
        self.model_version = 0
        self.retrains = 0
        self._dump_fh = None
        self._dump = None
        if dump_path is not None:
            self._dump_fh = open(dump_path, "w", newline="")
            self._dump = csv.writer(self._dump_fh)
            self._dump.writerow(FEATURE_NAMES + ["label"])

    @property
    def ml_ready(self):
        return self.tta_fn is not None or self.model is not None

    def close(self):
        if self._dump_fh is not None:
            self._dump_fh.close()
            self._dump_fh = None

    def _will_hold(self, req, hit):
        return hit or req.size <= self.cache.config.capacity_bytes

    def on_request(self, req, hit):
        now, key = req.time, req.key
        cfg = self.config
        sample = self.buffer.label(key, now)
        if sample is not None:
            self._accept([sample])
        if self.buffer.pending:
            expired = self.buffer.expire(now, cfg.label_horizon, cfg.censored_labels)
            if expired:
                self._accept(expired)
        meta = self.metas.get(key)
        if meta is None:
            if not (cfg.ghost_meta or self._will_hold(req, hit)):
                return
            meta = self.metas[key] = ObjectMeta(key, req.size)
        meta.tagged = False
        on_access(meta, now, cfg.edc_offset)

    def _accept(self, samples):
        self.training_samples += len(samples)
        if self._dump is not None:
            for features, label in samples:
                self._dump.writerow(list(features) + [label])
        if len(self.buffer.ready) >= self.config.train_batch:
            self.retrain()

    def retrain(self):
        batch = self.buffer.ready[-self.config.train_batch:]
        self.buffer.ready = []
        X = np.array([f for f, _ in batch], dtype=np.float64)
        labels = np.array([lab for _, lab in batch], dtype=np.float64)
        y = gbdt.to_log_target(labels) if self.config.log_target else labels
        cfg = replace(self.gbdt_config, seed=self.gbdt_config.seed + self.retrains)
        self.model = gbdt.train(X, y, cfg)
        self.retrains += 1
        self.model_version += 1
        log.debug("retrained model #%d on %d samples", self.retrains, len(batch))

    def tag(self, key, now):
        tag_candidate(self.buffer, self.metas[key], now)

    def forget(self, key):
        if not self.config.ghost_meta:
            self.metas.pop(key, None)
        else:
            meta = self.metas.get(key)
            if meta is not None:
                meta.pred_cache = None

    def predict_ttas(self, keys: Sequence[int], now: int) -> List[float]:
        if self.tta_fn is not None:
            return list(self.tta_fn(keys, now))
        metas = self.metas
        X = np.array([build_features(metas[k], now) for k in keys], dtype=np.float64)
        return self.ttas_from_rows(X).tolist()

    def ttas_from_rows(self, X) -> np.ndarray:
        """TTA estimates for feature rows (column 0 is the age)."""
        y = self.model.predict_batch(X)
        dist = gbdt.from_log_target(y) if self.config.log_target else y
        dist = np.maximum(dist, 0.0)
        return estimate_tta(dist, X[:, 0])


class MatEngine(LearnedEngine):
    """Threshold-controlled eviction over the heuristic's tail."""

    name = "mat"

    def __init__(self, policy: PriorityCache, config: Optional[MatConfig] = None,
                 gbdt_config: Optional[gbdt.GbdtConfig] = None, tta_fn: Optional[TtaFn] = None,
                 dump_path=None):
        config = config or MatConfig()
        super().__init__(config, gbdt_config, tta_fn, dump_path)
        self.policy = policy
        self.T = config.T0
        self._stall = py_substream(config.seed, "stall")
        self.last_r = 0

    def on_hit(self, req):
        self.policy.touch(req.key)

    def on_admit(self, req):
        self.policy.admit(req.key, req.size)

    def _stalled(self):
        p = self.config.stall_prob
        return p > 0 and self._stall.random() < p

    def _fallback(self, now):
        key = self.policy.remove_from_tail()
        self.tag(key, now)
        self.policy.delete(key)
        self.fallback_evictions += 1
        self.last_r = 0
        self.forget(key)
        return key

    def cached_tta(self, key, now):
        pc = self.metas[key].pred_cache
        if pc is None:
            return None
        tta, issued, version = pc
        if version != self.model_version or now - issued > self.config.staleness_bound:
            return None
        return tta

    def batched_predict(self, now, first=None):
        """Predict and cache TTAs for ``first`` plus the lowest-ranked residents,
        ``batch_B`` objects in total."""
        keys = [] if first is None else [first]
        want = self.config.batch_B - len(keys)
        if want > 0:
            keys.extend(self.policy.peek_tail(want))
        if not keys:
            return {}
        ttas = self.predict_ttas(keys, now)
        version = self.model_version
        for key, tta in zip(keys, ttas):
            self.metas[key].pred_cache = (tta, now, version)
        return dict(zip(keys, ttas))

    def _tta(self, key, now):
        tta = self.cached_tta(key, now)
        if tta is None:
            tta = self.batched_predict(now, first=key)[key]
        self.metas[key].pred_cache = None
        self.predictions += 1
        return tta

    def evict(self, now):
        policy = self.policy
        if not self.ml_ready or self._stalled():
            return self._fallback(now)
        cfg = self.config
        if self.T is None:
            self.T = float(max(1, len(self.cache)))
        limit = min(cfg.L, policy.attached_count())
        victim, best_key, best_tta = None, None, -math.inf
        r = 1
        while r <= limit:
            key = policy.remove_from_tail()
            self.tag(key, now)
            tta = self._tta(key, now)
            if tta >= self.T:
                victim = key
                break
            if tta > best_tta:
                best_key, best_tta = key, tta
            r += 1
            policy.insert(key, tta)
        if victim is None:
            # none cleared T: the largest-TTA candidate goes, revoking its reinsert
            victim = best_key
        self.last_r = r
        self.T = adjust_threshold(self.T, r, cfg.k, cfg.delta)
        policy.delete(victim)
        self.forget(victim)
        return victim
