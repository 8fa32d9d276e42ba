"""Per-object access metadata and fixed-width feature vectors.

Each object keeps up to 32 inter-access deltas (newest first), 10
exponentially decayed counters and two static features (size, class).
EDC ``i`` has half-life ``2**(i + edc_offset)`` requests and is decayed
lazily in closed form at access time.
"""

import math
import struct
from collections import deque
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional, Tuple

N_DELTAS = 32
N_EDCS = 10
MISSING = math.nan
DEFAULT_EDC_OFFSET = 5

FEATURE_NAMES = (
    ["age"]
    + [f"delta_{i}" for i in range(1, N_DELTAS + 1)]
    + [f"edc_{i}" for i in range(N_EDCS)]
    + ["size", "static_class"]
)
N_FEATURES = len(FEATURE_NAMES)

# key u64, size u32, last_access u64, static_class u8, tagged u8, n_deltas u8
_HEADER = struct.Struct("<QIQBBB")
META_BUDGET = 192


def half_lives(edc_offset=DEFAULT_EDC_OFFSET):
    return tuple(2.0 ** (i + edc_offset) for i in range(N_EDCS))


def edc_upper_bound(half_life):
    """Limit of an EDC hit on every tick: sum of 2**(-j/H) over j ≥ 0."""
    return 1.0 / (1.0 - 2.0 ** (-1.0 / half_life))


@lru_cache(maxsize=None)
def _decay_table(edc_offset):
    hl = half_lives(edc_offset)

    @lru_cache(maxsize=1 << 16)
    def factors(dt):
        return tuple(2.0 ** (-dt / h) for h in hl)

    return factors


def decay_factors(dt, edc_offset=DEFAULT_EDC_OFFSET):
    return _decay_table(edc_offset)(dt)


@dataclass(eq=False)
class ObjectMeta:
    key: int
    size: int
    last_access: Optional[int] = None
    deltas: deque = field(default_factory=lambda: deque(maxlen=N_DELTAS))
    edcs: list = field(default_factory=lambda: [0.0] * N_EDCS)
    static_class: int = 0
    tagged: bool = False
    # (tta, issued_at, model_version) of the last batched prediction
    pred_cache: Optional[Tuple[float, int, int]] = None


def on_access(meta: ObjectMeta, now: int, edc_offset=DEFAULT_EDC_OFFSET) -> ObjectMeta:
    """Record an access at logical time ``now`` (mutates and returns ``meta``)."""
    last = meta.last_access
    if last is None:
        meta.edcs = [e + 1.0 for e in meta.edcs]
    else:
        dt = now - last
        if dt < 0:
            raise ValueError(f"time went backwards: {now} < {last}")
        meta.deltas.appendleft(dt)
        meta.edcs = [e * f + 1.0 for e, f in zip(meta.edcs, decay_factors(dt, edc_offset))]
    meta.last_access = now
    meta.pred_cache = None
    return meta


def build_features(meta: ObjectMeta, now: int) -> list:
    """The 45-wide feature row; missing deltas are NaN."""
    if meta.last_access is None:
        raise ValueError(f"object {meta.key} has no recorded access")
    row = [float(now - meta.last_access)]
    row.extend(meta.deltas)
    row.extend([MISSING] * (N_DELTAS - len(meta.deltas)))
    row.extend(meta.edcs)
    row.append(meta.size)
    row.append(meta.static_class)
    return row


def pack_meta(meta: ObjectMeta) -> bytes:
    """Compact binary form; only recorded deltas are stored."""
    n = len(meta.deltas)
    last = -1 if meta.last_access is None else meta.last_access
    return (
        _HEADER.pack(meta.key, meta.size, last & 0xFFFFFFFFFFFFFFFF, meta.static_class, int(meta.tagged), n)
        + struct.pack(f"<{n}I", *meta.deltas)
        + struct.pack(f"<{N_EDCS}f", *meta.edcs)
    )


def unpack_meta(blob: bytes) -> ObjectMeta:
    key, size, last, cls, tagged, n = _HEADER.unpack_from(blob)
    off = _HEADER.size
    deltas = struct.unpack_from(f"<{n}I", blob, off)
    edcs = struct.unpack_from(f"<{N_EDCS}f", blob, off + 4 * n)
    return ObjectMeta(
        key=key,
        size=size,
        last_access=None if last == 0xFFFFFFFFFFFFFFFF else last,
        deltas=deque(deltas, maxlen=N_DELTAS),
        edcs=list(edcs),
        static_class=cls,
        tagged=bool(tagged),
    )
