"""Priority-queue heuristics exposing the tail-filter interface.

Every policy keeps a total order over the resident keys.  ``remove_from_tail``
detaches the lowest-ranked key from the queue without evicting it from the
cache; ``insert`` reattaches a detached key; ``delete`` drops a key for good
(it is the eviction hook, e.g. LFUDA ages on it).
"""

import heapq
import itertools
import math
from collections import OrderedDict, deque
from itertools import islice
from typing import List, Optional


class PolicyError(RuntimeError):
    """A queue operation violated its precondition."""


class EmptyQueueError(PolicyError, IndexError):
    pass


class PriorityCache:
    name = "abstract"

    def admit(self, key, size=1):
        raise NotImplementedError

    def touch(self, key):
        raise NotImplementedError

    def remove_from_tail(self):
        raise NotImplementedError

    def insert(self, key, rank_hint=None):
        raise NotImplementedError

    def delete(self, key):
        raise NotImplementedError

    def tail_peek(self):
        keys = self.peek_tail(1)
        if not keys:
            raise EmptyQueueError("queue is empty")
        return keys[0]

    def peek_tail(self, n) -> List:
        """Up to ``n`` attached keys in the order a drain would return them."""
        raise NotImplementedError

    def attached_count(self) -> int:
        raise NotImplementedError

    def is_detached(self, key) -> bool:
        return key in self._detached

    def __contains__(self, key):
        raise NotImplementedError

    def __len__(self):
        raise NotImplementedError


class LRU(PriorityCache):
    """Recency queue; OrderedDict front is the tail."""

    name = "lru"

    def __init__(self):
        self._queue = OrderedDict()
        self._detached = set()

    def admit(self, key, size=1):
        if key in self._queue or key in self._detached:
            raise PolicyError(f"key {key!r} already resident")
        self._queue[key] = None

    def touch(self, key):
        if key in self._queue:
            self._queue.move_to_end(key)
        elif key not in self._detached:
            raise PolicyError(f"touch of non-resident key {key!r}")

    def remove_from_tail(self):
        if not self._queue:
            raise EmptyQueueError("queue is empty")
        key, _ = self._queue.popitem(last=False)
        self._detached.add(key)
        return key

    def insert(self, key, rank_hint=None):
        # rank_hint is advisory: queue disciplines reattach at the head
        if key not in self._detached:
            raise PolicyError(f"insert of non-detached key {key!r}")
        self._detached.remove(key)
        self._queue[key] = None

    def delete(self, key):
        if key in self._queue:
            del self._queue[key]
        else:
            self._detached.remove(key)

    def peek_tail(self, n):
        return list(islice(self._queue, n))

    def attached_count(self):
        return len(self._queue)

    def __contains__(self, key):
        return key in self._queue or key in self._detached

    def __len__(self):
        return len(self._queue) + len(self._detached)


class FIFO(LRU):
    name = "fifo"

    def touch(self, key):
        if key not in self._queue and key not in self._detached:
            raise PolicyError(f"touch of non-resident key {key!r}")


class _ScoredQueue(PriorityCache):
    """Min-heap of (score, seq, key) with lazy invalidation."""

    def __init__(self):
        self._heap = []
        self._entry = {}  # attached key -> live heap entry
        self._detached = set()
        self._seq = itertools.count()

    def _push(self, key, score):
        entry = [score, next(self._seq), key, True]
        self._entry[key] = entry
        heapq.heappush(self._heap, entry)

    def _drop(self, key):
        entry = self._entry.pop(key)
        entry[3] = False

    def _score(self, key):
        raise NotImplementedError

    def remove_from_tail(self):
        heap = self._heap
        while heap:
            entry = heapq.heappop(heap)
            if entry[3]:
                key = entry[2]
                del self._entry[key]
                self._detached.add(key)
                return key
        raise EmptyQueueError("queue is empty")

    def peek_tail(self, n):
        popped, keys = [], []
        heap = self._heap
        while heap and len(keys) < n:
            entry = heapq.heappop(heap)
            if entry[3]:
                popped.append(entry)
                keys.append(entry[2])
        for entry in popped:
            heapq.heappush(heap, entry)
        return keys

    def attached_count(self):
        return len(self._entry)

    def _compact(self):
        if len(self._heap) > 4 * len(self._entry) + 64:
            self._heap = [e for e in self._heap if e[3]]
            heapq.heapify(self._heap)

    def __contains__(self, key):
        return key in self._entry or key in self._detached

    def __len__(self):
        return len(self._entry) + len(self._detached)


class LFUDA(_ScoredQueue):
    """LFU with dynamic aging: priority = hits + age_base.

    ``age_base`` takes the priority of each deleted (evicted) object.
    """

    name = "lfuda"

    def __init__(self):
        super().__init__()
        self.age_base = 0.0
        self._freq = {}
        self._priority = {}

    def priority(self, key):
        return self._priority[key]

    def _rank(self, key):
        self._priority[key] = p = self._freq[key] + self.age_base
        if key in self._entry:
            self._drop(key)
            self._compact()
        self._push(key, p)

    def admit(self, key, size=1):
        if key in self:
            raise PolicyError(f"key {key!r} already resident")
        self._freq[key] = 1
        self._rank(key)

    def touch(self, key):
        if key in self._entry:
            self._freq[key] += 1
            self._rank(key)
        elif key in self._detached:
            self._freq[key] += 1
            self._priority[key] = self._freq[key] + self.age_base
        else:
            raise PolicyError(f"touch of non-resident key {key!r}")

    def insert(self, key, rank_hint=None):
        if key not in self._detached:
            raise PolicyError(f"insert of non-detached key {key!r}")
        self._detached.remove(key)
        # re-aged with the current base so it cannot reappear at the tail at once
        self._rank(key)

    def delete(self, key):
        if key in self._entry:
            self._drop(key)
        else:
            self._detached.remove(key)
        self.age_base = self._priority.pop(key)
        del self._freq[key]


class LRUK(_ScoredQueue):
    """LRU-K: rank by the time of the K-th most recent access.

    Keys with fewer than K recorded accesses have infinite backward distance
    and go first, oldest last access first.
    """

    name = "lruk"

    def __init__(self, k_hist=2):
        if k_hist < 2:
            raise ValueError("k_hist must be ≥ 2")
        super().__init__()
        self.k_hist = int(k_hist)
        self._hist = {}
        self._clock = 0

    def _tick(self):
        self._clock += 1
        return self._clock

    def _score(self, key):
        h = self._hist[key]
        kth = h[-1] if len(h) == self.k_hist else -math.inf
        return (kth, h[0])

    def admit(self, key, size=1):
        if key in self:
            raise PolicyError(f"key {key!r} already resident")
        self._hist[key] = deque([self._tick()], maxlen=self.k_hist)
        self._push(key, self._score(key))

    def touch(self, key):
        if key in self._entry:
            self._hist[key].appendleft(self._tick())
            self._drop(key)
            self._compact()
            self._push(key, self._score(key))
        elif key in self._detached:
            self._hist[key].appendleft(self._tick())
        else:
            raise PolicyError(f"touch of non-resident key {key!r}")

    def insert(self, key, rank_hint=None):
        if key not in self._detached:
            raise PolicyError(f"insert of non-detached key {key!r}")
        self._detached.remove(key)
        # shift the history forward so the newest access lands on "now",
        # keeping the inter-access gaps
        h = self._hist[key]
        shift = self._tick() - h[0]
        self._hist[key] = deque((t + shift for t in h), maxlen=self.k_hist)
        self._push(key, self._score(key))

    def delete(self, key):
        if key in self._entry:
            self._drop(key)
        else:
            self._detached.remove(key)
        del self._hist[key]


class TwoQ(PriorityCache):
    """Full 2Q: FIFO probation queue A1in, ghost A1out, LRU main queue Am.

    Sizes are in bytes.  The tail comes from A1in while it holds more than
    ``a1in_frac`` of capacity (or Am is empty), otherwise from Am.
    """

    name = "2q"

    def __init__(self, capacity_bytes, a1in_frac=0.25, a1out_frac=0.5):
        if not 0 < a1in_frac < 1 or not 0 < a1out_frac < 1:
            raise ValueError("2Q fractions must be in (0, 1)")
        self.kin = a1in_frac * capacity_bytes
        self.kout = a1out_frac * capacity_bytes
        self._a1in = OrderedDict()
        self._am = OrderedDict()
        self._a1out = OrderedDict()
        self._size = {}
        self._origin = {}  # detached key -> "in" | "am"
        self._detached = self._origin
        self.a1in_bytes = 0
        self.a1out_bytes = 0

    def admit(self, key, size=1):
        if key in self:
            raise PolicyError(f"key {key!r} already resident")
        self._size[key] = size
        if key in self._a1out:
            self.a1out_bytes -= self._a1out.pop(key)
            self._am[key] = None
        else:
            self._a1in[key] = None
            self.a1in_bytes += size

    def touch(self, key):
        if key in self._am:
            self._am.move_to_end(key)
        elif key not in self._a1in and key not in self._origin:
            raise PolicyError(f"touch of non-resident key {key!r}")

    def _from_probation(self):
        return bool(self._a1in) and (self.a1in_bytes > self.kin or not self._am)

    def remove_from_tail(self):
        if self._from_probation():
            key, _ = self._a1in.popitem(last=False)
            self._origin[key] = "in"
        elif self._am:
            key, _ = self._am.popitem(last=False)
            self._origin[key] = "am"
        else:
            raise EmptyQueueError("queue is empty")
        return key

    def insert(self, key, rank_hint=None):
        origin = self._origin.pop(key, None)
        if origin is None:
            raise PolicyError(f"insert of non-detached key {key!r}")
        (self._a1in if origin == "in" else self._am)[key] = None

    def delete(self, key):
        origin = self._origin.pop(key, None)
        if origin is None:
            origin = "in" if key in self._a1in else "am"
            (self._a1in if origin == "in" else self._am).pop(key)
        size = self._size.pop(key)
        if origin == "in":
            self.a1in_bytes -= size
            self._a1out[key] = size
            self.a1out_bytes += size
            while self.a1out_bytes > self.kout and self._a1out:
                _, s = self._a1out.popitem(last=False)
                self.a1out_bytes -= s

    def peek_tail(self, n):
        first, second = (self._a1in, self._am) if self._from_probation() else (self._am, self._a1in)
        keys = list(islice(first, n))
        if len(keys) < n:
            keys.extend(islice(second, n - len(keys)))
        return keys

    def attached_count(self):
        return len(self._a1in) + len(self._am)

    def in_ghost(self, key):
        return key in self._a1out

    def __contains__(self, key):
        return key in self._size

    def __len__(self):
        return len(self._size)


POLICIES = {"lru": LRU, "fifo": FIFO, "lfuda": LFUDA, "lruk": LRUK, "2q": TwoQ}


def make_policy(name: str, capacity_bytes: int, params: Optional[dict] = None) -> PriorityCache:
    """Build a policy by CLI name; ``params`` carries ``--algo-param`` values."""
    params = dict(params or {})
    name = name.lower()
    if name in ("lru", "fifo", "lfuda"):
        if params:
            raise ValueError(f"{name} takes no parameters, got {sorted(params)}")
        return POLICIES[name]()
    if name == "lruk":
        k = params.pop("k_hist", params.pop("k", 2))
        if params:
            raise ValueError(f"unknown lruk parameters {sorted(params)}")
        return LRUK(int(k))
    if name == "2q":
        a1in = float(params.pop("a1in_frac", 0.25))
        a1out = float(params.pop("a1out_frac", 0.5))
        if params:
            raise ValueError(f"unknown 2q parameters {sorted(params)}")
        return TwoQ(capacity_bytes, a1in, a1out)
    raise ValueError(f"unknown heuristic {name!r}")
