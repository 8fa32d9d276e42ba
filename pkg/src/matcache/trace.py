"""Request streams: three-column trace files and seeded Zipf workloads."""

import io
from dataclasses import dataclass, field
from typing import Iterable, Iterator, List, Optional, TextIO, Union

import numpy as np

from .rng import substream

MAX_KEY = 2**64 - 1
DEFAULT_SIZE_DIST = ("fixed", 1000)


class TraceFormatError(ValueError):
    """A trace line could not be parsed."""


@dataclass(frozen=True)
class Request:
    time: int
    key: int
    size: int
    # file timestamp column, kept for provenance only
    stamp: Optional[int] = field(default=None, compare=False, repr=False)


def _lines(reader) -> Iterator[str]:
    for raw in reader:
        if isinstance(raw, bytes):
            raw = raw.decode("utf-8")
        yield raw


def iter_trace(reader: Union[TextIO, Iterable]) -> Iterator[Request]:
    """Lazily parse ``timestamp key size`` lines.

    Blank lines and ``#`` comments are skipped.  The request ``time`` is its
    0-based position in the stream, never the file timestamp.
    """
    index = 0
    for lineno, line in enumerate(_lines(reader), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 3:
            raise TraceFormatError(f"expected 3 fields, got {len(parts)} at line {lineno}")
        try:
            stamp, key, size = (int(p) for p in parts)
        except ValueError:
            raise TraceFormatError(f"non-numeric field at line {lineno}") from None
        if size < 1:
            raise TraceFormatError(f"size must be ≥ 1 at line {lineno}")
        if not 0 <= key <= MAX_KEY:
            raise TraceFormatError(f"key out of 64-bit range at line {lineno}")
        yield Request(index, key, size, stamp)
        index += 1


def parse_trace(reader) -> List[Request]:
    """Parse a whole trace from a text/binary stream or an in-memory body."""
    if isinstance(reader, (str, bytes)):
        reader = io.StringIO(reader if isinstance(reader, str) else reader.decode("utf-8"))
    return list(iter_trace(reader))


def load_trace(path) -> List[Request]:
    with open(path, "rb") as fh:
        return parse_trace(fh)


def write_trace(requests: Iterable[Request], fh: TextIO) -> None:
    for r in requests:
        stamp = r.time if r.stamp is None else r.stamp
        fh.write(f"{stamp} {r.key} {r.size}\n")


@dataclass(frozen=True)
class SyntheticSpec:
    universe: int
    alpha: float
    requests: int
    size_dist: tuple = DEFAULT_SIZE_DIST
    seed: int = 0

    def __post_init__(self):
        if self.universe < 1:
            raise ValueError("universe must be ≥ 1")
        if not self.alpha > 0:
            raise ValueError("alpha must be > 0")
        if self.requests < 1:
            raise ValueError("requests must be ≥ 1")
        kind = self.size_dist[0]
        if kind == "fixed":
            if len(self.size_dist) != 2 or int(self.size_dist[1]) < 1:
                raise ValueError("fixed size must be ≥ 1")
        elif kind == "lognormal":
            if len(self.size_dist) != 3 or self.size_dist[2] < 0:
                raise ValueError("lognormal needs (mu, sigma ≥ 0)")
        else:
            raise ValueError(f"unknown size distribution {kind!r}")


def zipf_pmf(universe: int, alpha: float) -> np.ndarray:
    weights = 1.0 / np.arange(1, universe + 1, dtype=np.float64) ** alpha
    return weights / weights.sum()


def object_sizes(spec: SyntheticSpec) -> np.ndarray:
    """Per-key sizes (index 0 is key 1), drawn once per key."""
    kind = spec.size_dist[0]
    if kind == "fixed":
        return np.full(spec.universe, int(spec.size_dist[1]), dtype=np.int64)
    rng = substream(spec.seed, "sizes")
    _, mu, sigma = spec.size_dist
    drawn = rng.lognormal(mu, sigma, spec.universe)
    return np.maximum(1, np.rint(drawn)).astype(np.int64)


def generate_zipf(spec: SyntheticSpec) -> List[Request]:
    """Draw ``spec.requests`` keys i.i.d. from Zipf(alpha) over 1..N.

    Sampling is inverse-CDF over the cumulative pmf table, so the stream is a
    pure function of ``spec``.
    """
    cdf = np.cumsum(zipf_pmf(spec.universe, spec.alpha))
    cdf[-1] = 1.0
    u = substream(spec.seed, "trace").random(spec.requests)
    keys = np.searchsorted(cdf, u, side="right") + 1
    np.minimum(keys, spec.universe, out=keys)
    sizes = object_sizes(spec)[keys - 1]
    return [Request(t, k, s) for t, (k, s) in enumerate(zip(keys.tolist(), sizes.tolist()))]


def unique_bytes(requests: Iterable[Request]) -> int:
    seen = {}
    for r in requests:
        seen.setdefault(r.key, r.size)
    return sum(seen.values())


def parse_synthetic(text: str) -> SyntheticSpec:
    """Parse ``zipf:n=1000,alpha=1.0,req=200000[,size=fixed:1000|lognormal:mu:sigma][,seed=1]``."""
    kind, _, body = text.partition(":")
    if kind != "zipf":
        raise ValueError(f"unknown synthetic workload {kind!r}")
    opts = {}
    for item in filter(None, body.split(",")):
        name, sep, value = item.partition("=")
        if not sep:
            raise ValueError(f"malformed synthetic option {item!r}")
        opts[name.strip()] = value.strip()
    unknown = set(opts) - {"n", "alpha", "req", "size", "seed"}
    if unknown:
        raise ValueError(f"unknown synthetic options {sorted(unknown)}")
    size = DEFAULT_SIZE_DIST
    if "size" in opts:
        parts = opts["size"].split(":")
        if parts[0] == "fixed" and len(parts) == 2:
            size = ("fixed", int(parts[1]))
        elif parts[0] == "lognormal" and len(parts) == 3:
            size = ("lognormal", float(parts[1]), float(parts[2]))
        else:
            raise ValueError(f"bad size distribution {opts['size']!r}")
    return SyntheticSpec(
        universe=int(opts.get("n", 1000)),
        alpha=float(opts.get("alpha", 1.0)),
        requests=int(opts.get("req", 100000)),
        size_dist=size,
        seed=int(opts.get("seed", 0)),
    )
